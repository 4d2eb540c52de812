"""Design generators (simplex codebook, random linear Gaussian SEMs) and responses."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from math import comb
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import EnvironmentData, ModelSpec, SupportSet, MAX_PREDICTORS

COEF_LOW, COEF_HIGH = 0.5, 1.5

SIMPLEX_DIRECTIONS = np.array([
    [1.0, 0.0],
    [-0.5, -np.sqrt(3.0) / 2.0],
    [-0.5, np.sqrt(3.0) / 2.0],
])


def simplex_codebook(n_e: int, env_id: int = 0) -> EnvironmentData:
    """Three unit simplex directions in the plane, scaled by ``sqrt(n_e)`` and zero padded."""
    if n_e < 2:
        raise ValueError(f"simplex codebook needs n_e >= 2, got {n_e}")
    X = np.zeros((n_e, 3))
    X[:2, :] = np.sqrt(n_e) * SIMPLEX_DIRECTIONS.T
    return EnvironmentData(X, env_id=env_id)


@dataclass(frozen=True)
class SemSpec:
    """Linear Gaussian SEM over the predictors.

    ``weights[j, i]`` is the coefficient of parent ``j`` in the equation of
    child ``i`` (0-based columns). ``order`` is a topological order.
    """

    m: int
    order: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    weights: np.ndarray
    intervention_means: Mapping[int, float]
    s_star: SupportSet
    y_coefficients: np.ndarray
    noise_std: float = 1.0

    @property
    def top_level(self) -> tuple[int, ...]:
        children = {c for _, c in self.edges}
        return tuple(i for i in range(self.m) if i not in children)

    def with_means(self, intervention_means: Mapping[int, float]) -> "SemSpec":
        return replace(self, intervention_means=dict(intervention_means))


def random_sem(
    rng: np.random.Generator,
    m_range: tuple[int, int] = (3, 8),
    n_edges: int | None = None,
    intervention_means: Mapping[int, float] | None = None,
) -> SemSpec:
    """Draw a random SEM.

    ``m`` is uniform on ``m_range`` (inclusive). A uniformly random
    topological order is drawn, then ``n_edges`` forward pairs are picked
    uniformly without replacement; ``n_edges=None`` draws the count
    uniformly from ``0..C(m, 2)``. Edge and response coefficients are
    uniform on [0.5, 1.5] and ``S*`` is uniform over all subsets.
    """
    lo, hi = m_range
    if not 1 <= lo <= hi <= MAX_PREDICTORS:
        raise ValueError(f"m_range {m_range} must lie within [1, {MAX_PREDICTORS}]")
    m = int(rng.integers(lo, hi + 1))
    order = tuple(int(i) for i in rng.permutation(m))
    max_edges = comb(m, 2)
    if n_edges is None:
        n_edges = int(rng.integers(0, max_edges + 1))
    elif not 0 <= n_edges <= max_edges:
        raise ValueError(f"n_edges must be in [0, {max_edges}] for m = {m}")
    forward = [(order[a], order[b]) for a in range(m) for b in range(a + 1, m)]
    picked = sorted(rng.choice(len(forward), size=n_edges, replace=False)) if n_edges else []
    edges = tuple(forward[k] for k in picked)
    weights = np.zeros((m, m))
    for j, i in edges:
        weights[j, i] = rng.uniform(COEF_LOW, COEF_HIGH)
    s_star = SupportSet(int(rng.integers(0, 1 << m)))
    y_coef = rng.uniform(COEF_LOW, COEF_HIGH, size=m)
    means = dict(intervention_means) if intervention_means is not None else {0: 0.0, 1: 1.0}
    return SemSpec(m, order, edges, weights, means, s_star, y_coef)


def sample_sem_environment(spec: SemSpec, env_id: int, n_e: int, rng: np.random.Generator) -> EnvironmentData:
    """Sample ``n_e`` rows; top-level predictors get the environment's mean shift."""
    if env_id not in spec.intervention_means:
        raise KeyError(f"no intervention mean declared for environment {env_id}")
    if n_e < 1:
        raise ValueError("n_e must be >= 1")
    noise = rng.standard_normal((n_e, spec.m)) * spec.noise_std
    top = set(spec.top_level)
    shift = spec.intervention_means[env_id]
    X = np.zeros((n_e, spec.m))
    for i in spec.order:
        X[:, i] = noise[:, i] + X @ spec.weights[:, i]
        if i in top:
            X[:, i] += shift
    return EnvironmentData(X, env_id=env_id)


def generate_response(env: EnvironmentData, model: ModelSpec, rng: np.random.Generator) -> EnvironmentData:
    """``Y = X gamma* + sigma * N(0, I)``; returns a new environment with ``Y`` filled in."""
    if model.m != env.m:
        raise ValueError(f"model has m = {model.m}, design has m = {env.m}")
    eps = rng.standard_normal(env.n)
    Y = env.X @ model.gamma + model.noise.sigma * eps
    return EnvironmentData(env.X, Y, env.env_id)


@dataclass
class Dataset:
    envs: list[EnvironmentData]
    model: ModelSpec
    provenance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# CSV pair: X file "env,row,x1..xm", Y file "env,row,y"

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_dataset_csv(envs: Sequence[EnvironmentData], x_path, y_path=None) -> None:
    m = envs[0].m
    with open(x_path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["env", "row", *[f"x{i + 1}" for i in range(m)]])
        for env in envs:
            for t, row in enumerate(env.X):
                out.writerow([env.env_id, t, *map(_fmt, row)])
    if y_path is None:
        return
    with open(y_path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["env", "row", "y"])
        for env in envs:
            if env.Y is None:
                raise ValueError(f"environment {env.env_id} has no response to write")
            for t, y in enumerate(env.Y):
                out.writerow([env.env_id, t, _fmt(y)])


class DataFormatError(ValueError):
    pass


def _read_rows(path, expect_prefix: list[str]) -> tuple[list[str], dict[int, list[tuple[int, list[float]]]]]:
    groups: dict[int, list[tuple[int, list[float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:2] != expect_prefix[:2] or len(header) < 3:
            raise DataFormatError(f"{path}: header must start with 'env,row' and name value columns")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                env, row = int(rec[0]), int(rec[1])
                vals = [float(v) for v in rec[2:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            groups.setdefault(env, []).append((row, vals))
    return header, groups


def read_dataset_csv(x_path, y_path=None) -> list[EnvironmentData]:
    """Inverse of :func:`write_dataset_csv`; environments come back sorted by id."""
    header, xs = _read_rows(x_path, ["env", "row"])
    expected = [f"x{i + 1}" for i in range(len(header) - 2)]
    if header[2:] != expected:
        raise DataFormatError(f"{x_path}: predictor columns must be named {','.join(expected)}")
    ys = {}
    if y_path is not None:
        yheader, ys = _read_rows(y_path, ["env", "row"])
        if yheader != ["env", "row", "y"]:
            raise DataFormatError(f"{y_path}: header must be env,row,y")
        if set(ys) != set(xs):
            raise DataFormatError("X and Y files list different environments")
    envs = []
    for env_id in sorted(xs):
        rows = sorted(xs[env_id])
        if [r for r, _ in rows] != list(range(len(rows))):
            raise DataFormatError(f"{x_path}: environment {env_id} rows are not 0..n-1")
        X = np.array([v for _, v in rows])
        Y = None
        if y_path is not None:
            yrows = sorted(ys[env_id])
            if [r for r, _ in yrows] != list(range(len(rows))):
                raise DataFormatError(f"{y_path}: environment {env_id} rows do not match X")
            Y = np.array([v[0] for _, v in yrows])
        try:
            envs.append(EnvironmentData(X, Y, env_id))
        except ValueError as exc:
            raise DataFormatError(str(exc)) from None
    if not envs:
        raise DataFormatError(f"{x_path}: no data rows")
    return envs
