"""``olar`` command line: gen, run and sweep.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
A ``--config`` file holds ``key = value`` lines whose keys are the
PipelineConfig fields; flags given on the command line win over the file,
and the OLAR_SEED environment variable wins over ``--seed``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from olar.bench import METHODS, SweepSpec, sweep, write_csv
from olar.data import SyntheticSpec, gen_synthetic, read_stream, save_synthetic
from olar.errors import DataError, OlarError
from olar.pipelines import PipelineConfig, budget_levels, budgeted_active, run
from olar.linalg import lp_norm

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        out[key.strip()] = value.strip().strip('"').strip("'")
    return out


def _seed(args) -> int | None:
    env = os.environ.get("OLAR_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"OLAR_SEED must be an integer, got {env!r}") from None
    return args.seed


def build_config(args, **overrides) -> PipelineConfig:
    raw: dict = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    seed = _seed(args)
    if seed is not None:
        raw["seed"] = seed
    try:
        return PipelineConfig.from_mapping(raw).validated()
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def cmd_gen(args) -> int:
    seed = _seed(args)
    spec = SyntheticSpec(args.n, args.d, p=args.p, noise_std=args.noise,
                         inflate_count=args.inflate_count, seed=0 if seed is None else seed)
    try:
        data = gen_synthetic(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    save_synthetic(data, args.out)
    print(json.dumps({"out": str(args.out), "n": args.n, "d": args.d}, sort_keys=True))
    return EXIT_OK


def _parse_mode(tokens) -> tuple[str, int | None]:
    if tokens == ["guarantee"]:
        return "guarantee", None
    if len(tokens) == 2 and tokens[0] == "budget":
        try:
            return "budget", int(tokens[1])
        except ValueError:
            pass
    raise UsageError(f"--mode takes 'guarantee' or 'budget N', got {' '.join(tokens)!r}")


def cmd_run(args) -> int:
    mode, budget = _parse_mode(args.mode)
    cfg = build_config(args, p=args.p, epsilon=args.epsilon, delta=args.delta,
                       weight_mode=args.weight_mode, boost_runs=args.boost_runs)
    stream = read_stream(args.data)
    if stream.oracle is None:
        raise DataError(f"{args.data} has no labels")
    if mode == "guarantee":
        res = run(stream, cfg)
    else:
        res = budgeted_active(stream, budget, cfg.p, seed=cfg.seed, config=cfg)
    # the objective is an evaluation on all labels, read from a separate oracle
    oracle = stream.fresh().oracle
    b = np.array([oracle.query(i) for i in range(stream.n)])
    objective = lp_norm(stream.features() @ res.x - b, cfg.p)
    doc = {
        "method": res.method,
        "mode": mode,
        "budget": budget,
        "p": cfg.p,
        "seed": cfg.seed,
        "weight_mode": cfg.weight_mode,
        "x": [float(v) for v in res.x],
        "objective": float(objective),
        "queries": res.queries,
        "oracle_invocations": stream.oracle.invocations,
        "stage_rows": res.stage_rows,
        "peak_rows": res.peak_rows,
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    stream = read_stream(args.data)
    if stream.oracle is None:
        raise DataError(f"{args.data} has no labels")
    cfg = build_config(args, p=args.p, epsilon=args.epsilon, delta=args.delta, weight_mode=args.weight_mode)
    if args.budgets:
        budgets = args.budgets
    else:
        budgets = budget_levels(stream.n, tuple(args.fractions)) if args.fractions else budget_levels(stream.n)
    spec = SweepSpec(args.methods, budgets, args.trials, cfg.p, str(args.data), cfg.seed, args.out, cfg)
    try:
        spec = spec.validated()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    records = sweep(spec, stream)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_csv(records, fh)
    else:
        write_csv(records, sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="olar", description="Online active lp regression.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--p", type=float, default=2.0, help="sets the inflation factor n^(1/p)")
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--inflate-count", type=int, default=None, help="rows to inflate (default d)")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    def pipeline_flags(q):
        q.add_argument("--data", required=True, help="stream file, CSV or dataset directory")
        q.add_argument("--p", type=float, default=None)
        q.add_argument("--epsilon", type=float, default=None)
        q.add_argument("--delta", type=float, default=None)
        q.add_argument("--weight-mode", choices=("exact-oracle", "compression-tree", "leverage-fast"))
        q.add_argument("--seed", type=int, default=None)
        q.add_argument("--config", default=None, help="key = value file of PipelineConfig fields")

    r = sub.add_parser("run", help="run one pipeline and print JSON")
    pipeline_flags(r)
    r.add_argument("--mode", nargs="+", default=["guarantee"], metavar="MODE",
                   help="'guarantee' or 'budget N'")
    r.add_argument("--boost-runs", type=int, default=None)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="budget sweep to CSV")
    pipeline_flags(s)
    s.add_argument("--methods", nargs="+", default=["active-online", "uniform"], choices=sorted(METHODS))
    s.add_argument("--budgets", nargs="+", type=int, default=None)
    s.add_argument("--fractions", nargs="+", type=float, default=None,
                   help="budgets as fractions of n (default 0.08 0.10 0.12 0.14)")
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--out", default=None, help="CSV path (default stdout)")
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"olar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"olar: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OlarError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"olar: numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"olar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
