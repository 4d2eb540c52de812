"""Command line: ``icpmac experiment | bounds | decode | generate``.

Exit codes: 0 success, 1 I/O failure, 2 bad configuration, data or arguments.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import BOUND_NAMES, PowerConstraint, assemble_report
from .core import ModelSpec, NoiseSpec, SupportSet, as_coefficients
from .datagen import (
    DataFormatError,
    generate_response,
    random_sem,
    read_dataset_csv,
    sample_sem_environment,
    simplex_codebook,
    write_dataset_csv,
)
from .decoders import icp_mdd, icp_mdd_known, mii_known
from .harness import (
    ConfigError,
    aggregate,
    builtin_names,
    builtin_path,
    emit_csv,
    emit_trials_csv,
    load_config,
    parse_scenario,
    run_trials,
)

EXIT_OK, EXIT_IO, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    return "" if x is None else f"{x:.10g}"


def _parse_w(text: str) -> np.ndarray:
    try:
        return as_coefficients([float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise UsageError(f"--w: {exc}") from None


def _format_support(S: SupportSet | None) -> str:
    return "NONE" if S is None else "[" + ", ".join(map(str, S.indices())) + "]"


def cmd_experiment(args) -> int:
    path = args.config
    if not Path(path).exists() and path in builtin_names():
        path = builtin_path(path)
    scenario, output = load_config(path)
    overrides = {k: v for k, v in (("seed", args.seed), ("trials", args.trials)) if v is not None}
    if overrides:
        scenario = parse_scenario({**scenario.model_dump(), **overrides})
    output = args.output or output or f"{scenario.name}.csv"
    records = run_trials(scenario, threads=args.threads)
    rows = aggregate(records)
    emit_csv(rows, output)
    if args.keep_trials:
        emit_trials_csv(records, Path(output).with_suffix(".trials.csv"))
    total = scenario.trials * len(scenario.grid.values)
    print(f"{output}\t{total} trials")
    return EXIT_OK


def cmd_bounds(args) -> int:
    envs = read_dataset_csv(args.x, args.y)
    w = _parse_w(args.w)
    if len(w) != envs[0].m:
        raise UsageError(f"--w has {len(w)} entries but the design has m = {envs[0].m}")
    constraints = "from-data"
    if args.p_e is not None or args.q_e is not None:
        constraints = PowerConstraint(args.p_e, args.q_e)
    report = assemble_report(envs, w, args.sigma_min, constraints)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["env", *[f"bound_{b}" for b in BOUND_NAMES]])
    for env_id, vals in report.per_env.items():
        out.writerow([env_id, *[_fmt(v) for v in vals.as_dict().values()]])
    out.writerow(["overall", *[_fmt(v) for v in report.overall.as_dict().values()]])
    return EXIT_OK


def cmd_decode(args) -> int:
    if args.method in ("icp_mdd_known", "mii_known") and args.w is None:
        raise UsageError(f"--w is required for {args.method}")
    if args.method == "icp_mdd" and args.p is None:
        raise UsageError("--p is required for icp_mdd")
    if args.method == "icp_mdd" and args.p < 0:
        raise UsageError("--p must be >= 0")
    envs = read_dataset_csv(args.x, args.y)
    if args.method == "icp_mdd":
        outcome = icp_mdd(envs, args.p)
    else:
        w = _parse_w(args.w)
        if len(w) != envs[0].m:
            raise UsageError(f"--w has {len(w)} entries but the design has m = {envs[0].m}")
        if args.method == "icp_mdd_known":
            outcome = icp_mdd_known(envs, w)
        else:
            outcome = mii_known(envs, w, args.sigma)
    print(_format_support(outcome.estimate))
    return EXIT_OK


def cmd_generate(args) -> int:
    rng = np.random.default_rng(args.seed)
    means = dict(enumerate(args.means)) if args.means else {e: float(e) for e in range(args.envs)}
    if len(means) != args.envs:
        raise UsageError("--means needs one value per environment")
    if args.generator == "simplex":
        s_star = SupportSet(int(rng.integers(0, 8)))
        w = np.ones(3)
        designs = [simplex_codebook(args.n, e) for e in range(args.envs)]
    else:
        spec = random_sem(rng, (args.m, args.m), n_edges=0 if args.no_edges else None,
                          intervention_means=means)
        s_star, w = spec.s_star, spec.y_coefficients
        designs = [sample_sem_environment(spec, e, args.n, rng) for e in range(args.envs)]
    if args.support is not None:
        s_star = SupportSet.from_indices(int(i) for i in args.support.split(",") if i.strip())
    model = ModelSpec(w, s_star, NoiseSpec(sigma=args.sigma, sigma_min=args.sigma if args.sigma > 0 else 1.0))
    envs = [generate_response(env, model, rng) for env in designs]
    write_dataset_csv(envs, args.x, args.y)
    print(f"s_star={_format_support(s_star)}")
    print("w=" + ",".join(f"{v:.17g}" for v in w))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icpmac", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("experiment", help="run a Monte Carlo scenario and write the aggregated CSV")
    p.add_argument("config", help="JSON scenario file, or a built-in name (" + ", ".join(builtin_names()) + ")")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--output", "-o")
    p.add_argument("--threads", type=int, help="worker threads (default: $ICPMAC_THREADS or 1)")
    p.add_argument("--keep-trials", action="store_true", help="also write <output>.trials.csv")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("bounds", help="evaluate all lower bounds on a dataset")
    p.add_argument("x", help="X file (env,row,x1..xm)")
    p.add_argument("y", nargs="?", help="Y file (env,row,y); not needed for bounds")
    p.add_argument("--w", required=True, help="comma-separated non-zero coefficients")
    p.add_argument("--sigma-min", type=float, default=1.0)
    p.add_argument("--p-e", type=float, help="codeword power budget (default: tight, from data)")
    p.add_argument("--q-e", type=float, help="signal power budget (default: tight, from data)")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("decode", help="estimate the support from a dataset")
    p.add_argument("x")
    p.add_argument("y")
    p.add_argument("--method", required=True, choices=["icp_mdd_known", "mii_known", "icp_mdd"])
    p.add_argument("--w")
    p.add_argument("--p", type=float)
    p.add_argument("--sigma", type=float, default=1.0, help="true noise std for mii_known")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("generate", help="write a simulated dataset as an X/Y CSV pair")
    p.add_argument("--generator", choices=["simplex", "sem"], default="simplex")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--envs", type=int, default=2)
    p.add_argument("--m", type=int, default=4, help="predictors (sem only)")
    p.add_argument("--means", type=lambda s: [float(v) for v in s.split(",")], help="per-env intervention means")
    p.add_argument("--no-edges", action="store_true")
    p.add_argument("--support", help="force S* (comma-separated indices)")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, DataFormatError) as exc:
        print(f"icpmac {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"icpmac {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"icpmac {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
