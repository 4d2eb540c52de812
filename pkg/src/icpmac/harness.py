"""Monte Carlo experiments: generate datasets, decode, evaluate bounds, aggregate to CSV.

Randomness: every (trial, purpose, environment) triple draws from its own
stream derived from the scenario seed with :class:`numpy.random.SeedSequence`
spawn keys. Grid points share streams (common random numbers), so a trial
sees the same SEM and the same base noise at every grid point, and results
do not depend on the order or thread in which trials run.
"""

from __future__ import annotations

import csv
import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Literal, Mapping, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .bounds import BOUND_NAMES, PowerConstraint, assemble_report
from .core import ModelSpec, NoiseSpec, SupportSet, detect_collisions
from .datagen import (
    Dataset,
    generate_response,
    random_sem,
    sample_sem_environment,
    simplex_codebook,
)
from .decoders import (
    MII_TEST,
    DecodeOutcome,
    icp_mdd_from_norms,
    icp_mdd_known,
    mii_known,
    pooled_residual_norms,
)

CSV_HEADER = [
    "scenario", "grid_value", "method", "p_err", "stderr",
    "bound_prop1", "bound_prop2", "bound_cor1", "bound_prop3", "bound_cor2",
    "trials", "seed", "collisions",
]

_STRUCT, _DESIGN, _NOISE = 0, 1, 2
_ICP_MDD = re.compile(r"^icp_mdd\(\s*([0-9.eE+-]+)\s*\)$")


class ConfigError(ValueError):
    """Invalid scenario; the message starts with the offending field path."""


class GridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["sample_size", "intervention_mean"]
    values: list[float] = Field(min_length=1)


class ConstraintSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    p_e: float | None = Field(default=None, ge=0)
    q_e: float | None = Field(default=None, ge=0)


class ExperimentScenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = Field(min_length=1)
    generator: Literal["simplex", "sem-known", "sem-unknown"]
    grid: GridSpec
    env_count: int = Field(default=2, ge=1)
    trials: int = Field(ge=1)
    seed: int = Field(ge=0, lt=2**64)
    decoders: list[str] = Field(min_length=1)
    bounds: list[Literal["prop1", "prop2", "cor1", "prop3", "cor2"]] = Field(default_factory=lambda: list(BOUND_NAMES))
    sigma: float = Field(default=1.0, gt=0)
    sigma_min: float | None = Field(default=None, gt=0)
    w_policy: Union[Literal["all-ones", "drawn"], list[float], None] = None
    n_e: int | None = Field(default=None, ge=1)
    intervention_means: list[float] | None = None
    m_range: tuple[int, int] = (3, 8)
    edges: Literal["random", "none"] = "random"
    constraints: ConstraintSpec | None = None

    @field_validator("decoders")
    @classmethod
    def _known_decoders(cls, v):
        for name in v:
            if name in ("icp_mdd_known", "mii_known"):
                continue
            match = _ICP_MDD.match(name)
            if not match or float(match.group(1)) < 0:
                raise ValueError(f"unknown decoder {name!r}; use icp_mdd_known, mii_known or icp_mdd(<p>=0>)")
        if len(set(v)) != len(v):
            raise ValueError("duplicate decoder names")
        return v

    @field_validator("w_policy")
    @classmethod
    def _nonzero_w(cls, v):
        if isinstance(v, list) and (not v or any(x == 0 for x in v)):
            raise ValueError("fixed w must be a non-empty list of non-zero values")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        if self.sigma_min is not None and self.sigma_min > self.sigma:
            raise ValueError("sigma_min: must not exceed sigma")
        lo, hi = self.m_range
        if not 1 <= lo <= hi <= 24:
            raise ValueError("m_range: need 1 <= low <= high <= 24")
        if self.intervention_means is not None and len(self.intervention_means) != self.env_count:
            raise ValueError("intervention_means: length must equal env_count")
        if self.grid.kind == "sample_size":
            min_n = 2 if self.generator == "simplex" else 1
            if any(v != int(v) or v < min_n for v in self.grid.values):
                raise ValueError(f"grid.values: sample sizes must be integers >= {min_n}")
        else:
            if self.generator == "simplex":
                raise ValueError("grid.kind: the simplex generator has no interventions to sweep")
            if self.n_e is None:
                raise ValueError("n_e: required when sweeping intervention means")
            if self.env_count < 2:
                raise ValueError("env_count: sweeping the second environment's mean needs env_count >= 2")
        if self.generator == "simplex" and isinstance(self.w_policy, list) and len(self.w_policy) != 3:
            raise ValueError("w_policy: simplex designs have m = 3")
        return self

    @property
    def effective_sigma_min(self) -> float:
        return self.sigma if self.sigma_min is None else self.sigma_min

    @property
    def base_means(self) -> list[float]:
        if self.intervention_means is not None:
            return list(self.intervention_means)
        return [float(e) for e in range(self.env_count)]


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"]
        # model-level checks name their field as "field: message"
        if loc == "<root>" and ": " in msg:
            msg = msg.split("Value error, ", 1)[-1]
            loc, msg = msg.split(": ", 1)
        parts.append(f"{loc}: {msg}")
    return "; ".join(parts)


def parse_scenario(data: Mapping) -> ExperimentScenario:
    try:
        return ExperimentScenario.model_validate(dict(data))
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc)) from None


def load_config(path) -> tuple[ExperimentScenario, str | None]:
    """Read a JSON scenario file; returns the scenario and its optional ``output`` path."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<file>: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a JSON object")
    output = data.pop("output", None)
    if output is not None and not isinstance(output, str):
        raise ConfigError("output: must be a string path")
    return parse_scenario(data), output


def builtin_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("icpmac.scenarios").iterdir() if p.name.endswith(".json"))


def builtin_path(name: str) -> Path:
    path = resources.files("icpmac.scenarios") / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"<builtin>: no built-in scenario {name!r} (have {', '.join(builtin_names())})")
    return Path(str(path))


def builtin_scenario(name: str, **overrides) -> ExperimentScenario:
    scenario, _ = load_config(builtin_path(name))
    if overrides:
        scenario = parse_scenario({**scenario.model_dump(), **overrides})
    return scenario


# ---------------------------------------------------------------------------
# dataset generation

def _rng(seed: int, trial: int, purpose: int, env: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, purpose, env)))


def _resolve_w(policy, m: int, drawn: np.ndarray) -> np.ndarray:
    if policy == "all-ones":
        return np.ones(m)
    if policy == "drawn":
        return drawn
    w = np.asarray(policy, dtype=float)
    if len(w) != m:
        raise ConfigError(f"w_policy: fixed w has length {len(w)} but the drawn model has m = {m}")
    return w


def make_dataset(scenario: ExperimentScenario, grid_value: float, trial: int) -> Dataset:
    """Build the dataset of one trial at one grid point (deterministic in the seed)."""
    sc = scenario
    struct = _rng(sc.seed, trial, _STRUCT)
    means = sc.base_means
    if sc.grid.kind == "sample_size":
        n = int(grid_value)
    else:
        n = sc.n_e
        means[1] = float(grid_value)
    env_means = dict(enumerate(means))

    if sc.generator == "simplex":
        s_star = SupportSet(int(struct.integers(0, 8)))
        drawn = struct.uniform(0.5, 1.5, size=3)
        w = _resolve_w(sc.w_policy or "all-ones", 3, drawn)
        designs = [simplex_codebook(n, env_id=e) for e in range(sc.env_count)]
    else:
        spec = random_sem(struct, sc.m_range, n_edges=0 if sc.edges == "none" else None,
                          intervention_means=env_means)
        s_star = spec.s_star
        w = _resolve_w(sc.w_policy or "drawn", spec.m, spec.y_coefficients)
        designs = [sample_sem_environment(spec, e, n, _rng(sc.seed, trial, _DESIGN, e))
                   for e in range(sc.env_count)]

    noise = NoiseSpec(sigma=sc.sigma, sigma_min=sc.effective_sigma_min)
    model = ModelSpec(w, s_star, noise)
    envs = [generate_response(env, model, _rng(sc.seed, trial, _NOISE, env.env_id)) for env in designs]
    return Dataset(envs, model, {"generator": sc.generator, "seed": sc.seed, "trial": trial,
                                 "grid_value": grid_value})


# ---------------------------------------------------------------------------
# decoders by name

Decoder = Callable[[Dataset], Union[DecodeOutcome, SupportSet, None]]


def _builtin_decoders(names: Sequence[str]) -> dict[str, Decoder]:
    out: dict[str, Decoder] = {}
    for name in names:
        if name == "icp_mdd_known":
            out[name] = lambda ds: icp_mdd_known(ds.envs, ds.model.w)
        elif name == "mii_known":
            out[name] = lambda ds: mii_known(ds.envs, ds.model.w, ds.model.noise.sigma)
        else:
            p = float(_ICP_MDD.match(name).group(1))
            out[name] = _icp_mdd_decoder(p)
    return out


def _icp_mdd_decoder(p: float) -> Decoder:
    def run(ds: Dataset) -> DecodeOutcome:
        # several thresholds share one set of pooled fits per dataset
        norms = ds.provenance.get("_icp_norms")
        if norms is None:
            norms = ds.provenance["_icp_norms"] = pooled_residual_norms(ds.envs)
        return icp_mdd_from_norms(norms, p, [e.env_id for e in ds.envs])
    return run


# ---------------------------------------------------------------------------
# trials and aggregation

@dataclass
class TrialRecord:
    scenario: str
    grid_value: float
    method: str
    trial: int
    error: int
    absent: bool
    collision: bool
    bounds: dict[str, float | None]
    seed: int = 0
    flags: tuple[str, ...] = ()


@dataclass
class AggregateRow:
    scenario: str
    grid_value: float
    method: str
    p_err: float
    stderr: float
    bounds: dict[str, float | None]
    trials: int
    seed: int
    collisions: int
    abstentions: int = 0
    bound_min: dict[str, float | None] = field(default_factory=dict)
    bound_max: dict[str, float | None] = field(default_factory=dict)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("ICPMAC_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def _run_trial(scenario: ExperimentScenario, decoders: Mapping[str, Decoder],
               grid_value: float, trial: int) -> list[TrialRecord]:
    ds = make_dataset(scenario, grid_value, trial)
    w = ds.model.w
    collision = any(detect_collisions(env, w) for env in ds.envs)
    constraints = "from-data"
    if scenario.constraints is not None:
        constraints = PowerConstraint(scenario.constraints.p_e, scenario.constraints.q_e)
    report = assemble_report(ds.envs, w, ds.model.noise.sigma_min, constraints, scenario.bounds)
    bounds = report.overall.as_dict()
    records = []
    for name, decode in decoders.items():
        out = decode(ds)
        if isinstance(out, DecodeOutcome):
            estimate, flags = out.estimate, out.flags
        else:
            estimate, flags = out, ()
        records.append(TrialRecord(
            scenario=scenario.name, grid_value=float(grid_value), method=name, trial=trial,
            error=int(estimate is None or estimate != ds.model.s_star), absent=estimate is None,
            collision=collision, bounds=bounds, seed=scenario.seed, flags=tuple(flags),
        ))
    return records


def run_trials(scenario: ExperimentScenario, threads: int | None = None,
               decoders: Mapping[str, Decoder] | None = None) -> list[TrialRecord]:
    """All per-trial records, ordered by grid point, trial, then decoder."""
    decoders = dict(decoders) if decoders is not None else _builtin_decoders(scenario.decoders)
    units = [(g, t) for g in scenario.grid.values for t in range(scenario.trials)]
    work = lambda unit: _run_trial(scenario, decoders, *unit)
    n_threads = resolve_threads(threads)
    if n_threads == 1:
        chunks = list(map(work, units))
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            chunks = list(pool.map(work, units))
    return [rec for chunk in chunks for rec in chunk]


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def aggregate(records: Sequence[TrialRecord]) -> list[AggregateRow]:
    if not records:
        return []
    names = {r.scenario for r in records}
    if len(names) > 1:
        raise ValueError(f"cannot aggregate records from several scenarios: {sorted(names)}")
    groups: dict[tuple[float, str], list[TrialRecord]] = {}
    for rec in records:
        groups.setdefault((rec.grid_value, rec.method), []).append(rec)
    rows = []
    for (grid_value, method) in sorted(groups):
        recs = groups[(grid_value, method)]
        k = len(recs)
        p = sum(r.error for r in recs) / k
        per_bound = {b: [r.bounds.get(b) for r in recs] for b in BOUND_NAMES}
        present = {b: [v for v in vs if v is not None] for b, vs in per_bound.items()}
        rows.append(AggregateRow(
            scenario=recs[0].scenario, grid_value=grid_value, method=method,
            p_err=p, stderr=float(np.sqrt(p * (1.0 - p) / k)),
            bounds={b: _mean_or_none(vs) for b, vs in per_bound.items()},
            trials=k, seed=recs[0].seed, collisions=sum(r.collision for r in recs),
            abstentions=sum(r.absent for r in recs),
            bound_min={b: (min(v) if v else None) for b, v in present.items()},
            bound_max={b: (max(v) if v else None) for b, v in present.items()},
        ))
    return rows


def run_scenario(scenario: ExperimentScenario, threads: int | None = None,
                 decoders: Mapping[str, Decoder] | None = None) -> list[AggregateRow]:
    return aggregate(run_trials(scenario, threads, decoders))


def _num(x) -> str:
    if x is None:
        return ""
    return f"{x:.10g}"


def emit_csv(rows: Sequence[AggregateRow], path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_HEADER)
        for r in rows:
            out.writerow([
                r.scenario, _num(r.grid_value), r.method, _num(r.p_err), _num(r.stderr),
                *[_num(r.bounds.get(b)) for b in BOUND_NAMES],
                r.trials, r.seed, r.collisions,
            ])


TRIALS_HEADER = ["scenario", "grid_value", "trial", "method", "error", "absent", "collision",
                 *[f"bound_{b}" for b in BOUND_NAMES], "flags"]


def emit_trials_csv(records: Sequence[TrialRecord], path) -> None:
    """Per-trial diagnostics sidecar (abstentions, collisions, per-dataset bound values)."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRIALS_HEADER)
        for r in records:
            out.writerow([
                r.scenario, _num(r.grid_value), r.trial, r.method, r.error, int(r.absent),
                int(r.collision), *[_num(r.bounds.get(b)) for b in BOUND_NAMES], ";".join(r.flags),
            ])


def scenario_metadata(scenario: ExperimentScenario) -> dict:
    return {"scenario": scenario.model_dump(mode="json"), "mii_known_test": MII_TEST,
            "constraints": "declared" if scenario.constraints else "from-data (tight, per dataset)"}


def soundness_violations(rows: Sequence[AggregateRow], z: float = 3.0) -> list[tuple[float, str, str, float, float]]:
    """Rows whose empirical error sits more than ``z`` standard errors below a bound.

    Grid points with any colliding design are skipped.
    """
    bad = []
    for r in rows:
        if r.collisions:
            continue
        for b, v in r.bounds.items():
            if v is not None and r.p_err < v - z * r.stderr:
                bad.append((r.grid_value, r.method, b, r.p_err, v))
    return bad
