"""Command-line entry point: simulate, table1, validate, oracle."""
from __future__ import annotations

import argparse
import sys

from . import harness
from .config import VARIANTS, ConfigError, default_config, load_config
from .oracle import benchmark_instance, dp_oracle, solver_benchmark

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2


def _config(path):
    return default_config() if path is None else load_config(path)


def _simulate(args) -> int:
    cfg = _config(args.config)
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    result = harness.run(cfg, args.variant, args.seed)
    harness.write_outputs(result, args.out)
    m = result.metrics
    print(f"{result.variant} seed={result.seed} T_bar={m.T_bar:.4f} J_bar={m.J_bar:.4f} "
          f"fallbacks={sum(m.fallbacks.values())}")
    return EXIT_OK


def _table1(args) -> int:
    cfg = _config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    rows = harness.table1(cfg, args.out)
    print(f"{'variant':<12} {'T_bar':>8} {'J_bar':>10}")
    for r in rows:
        print(f"{r['variant']:<12} {r['T_bar']:>8.4f} {r['J_bar']:>10.4f}")
    return EXIT_OK


def _validate(args) -> int:
    cfg = _config(args.config)
    rep = harness.validate(cfg, samples=args.samples)
    ok = "pass" if rep["passed"] else "FAIL"
    print(f"delta bound      {rep['delta_bound']:.4f} (configured {rep['delta']:.2f}) "
          f"{'ok' if rep['delta_ok'] else 'too small'}")
    print(f"lipschitz nu     sampled {rep['nu_hat']:.4f}, configured {rep['nu']:.4f}")
    print(f"lipschitz xi     sampled {rep['xi_hat']:.4f}, configured {rep['xi']:.4f}")
    print(f"terminal set RPI max ratio {rep['rpi_max_ratio']:.4f} "
          f"{'ok' if rep['rpi_ok'] else 'violated'}")
    if not rep["lipschitz_within_config"]:
        print("note: sampled Lipschitz constants exceed the configured ones")
    print(ok)
    return EXIT_OK if rep["passed"] else EXIT_FAILED


def _oracle(args) -> int:
    solver_value, oracle_value = solver_benchmark(N=args.horizon, budget=args.budget)
    gap = abs(solver_value - oracle_value) / max(abs(oracle_value), 1e-12)
    print(f"solver {solver_value:.7f}  dp oracle {oracle_value:.7f}  relative gap {gap:.2%}")
    if args.horizon == 1:
        print(f"dp oracle N=1 value {dp_oracle(benchmark_instance(1)):.12f}")
    return EXIT_OK if gap <= args.tolerance else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stmpc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one variant and write its logs")
    s.add_argument("--config", help="YAML config (defaults when omitted)")
    s.add_argument("--variant", choices=VARIANTS, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_simulate)

    t = sub.add_parser("table1", help="run all five variants and write table1.csv")
    t.add_argument("--config")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True)
    t.set_defaults(func=_table1)

    v = sub.add_parser("validate", help="check delta bound, Lipschitz estimates and terminal set")
    v.add_argument("--config")
    v.add_argument("--samples", type=int, default=100_000)
    v.set_defaults(func=_validate)

    o = sub.add_parser("oracle", help="compare the solver with grid DP on a scalar benchmark")
    o.add_argument("--horizon", type=int, default=2)
    o.add_argument("--budget", type=int, default=400)
    o.add_argument("--tolerance", type=float, default=0.05)
    o.set_defaults(func=_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
