"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness, metrics, scenarios
from .configio import config_hash, config_to_dict, load_config
from .errors import ConfigError, NumericalError, OracleSizeError, TransportLabError
from .fieldio import read_field, write_field, write_step_csv
from .kernels import KernelSpec
from .model import ScalarField, VelocityField
from .solver import run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    config = load_config(args.config)
    chash = config_hash(config)
    traj, series = run(config)
    out = _out_dir(args)
    write_step_csv(series, out / "steps.csv")
    for i, (t, n) in enumerate(zip(traj.times, traj.fields)):
        write_field(out / f"snapshot_{i:05d}.bin", n, t, chash)
    write_field(out / "final.bin", traj.fields[-1], traj.times[-1], chash)
    if traj.velocities:
        write_field(out / "final_velocity.bin", traj.velocities[-1], traj.times[-1], chash)
    summary = {
        "config_hash": chash,
        "steps": len(series.steps),
        "snapshots": len(traj),
        "t_final": traj.times[-1],
        "mass_drift": series.max_relative_mass_drift(),
        "final_linf": traj.fields[-1].linf(),
    }
    (out / "run_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"run: {summary['steps']} steps to t={summary['t_final']:.6g}, mass drift {summary['mass_drift']:.3e}")
    return EXIT_OK


def _workers(args, spec) -> int:
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("must be >= 1", "--workers")
        return args.workers
    if os.environ.get(harness.WORKERS_ENV):
        return harness.default_workers()
    return spec.workers


def cmd_sweep(args) -> int:
    spec = harness.load_sweep(args.sweep)
    report = harness.run_sweep(spec, workers=_workers(args, spec))
    jp, _ = report.write(_out_dir(args))
    status = "feasible" if not report.infeasible_at_c_max else "INFEASIBLE at C_max"
    print(
        f"sweep: {report.feasible_count}/{len(report.rows)} rows feasible, "
        f"fitted C = {report.fitted_C:.6g} ({status}); report at {jp}"
    )
    return EXIT_OK


def _h_values(values) -> list[float]:
    hs = [float(h) for h in values]
    if not hs:
        raise ConfigError("need at least one h", "--h")
    return hs


def cmd_metrics(args) -> int:
    field, meta = read_field(args.field)
    if not isinstance(field, ScalarField):
        raise ConfigError("metrics expects a scalar field", "field")
    hs = _h_values(args.h)
    vals = [metrics.qnorm(field, KernelSpec(h, field.grid.dim), args.p, args.levels) for h in hs]
    series = metrics.QSeries(tuple(hs), args.p, tuple(vals), Path(args.field).stem)
    out = _out_dir(args)
    metrics.write_qseries_csv([series], out / "qseries.csv")
    for h, v, ind in zip(series.h_list, series.values, series.indicator):
        print(f"h={h:.6g} Q={v:.10g} Q/|log h|={ind:.10g}")
    return EXIT_OK


def cmd_commutator(args) -> int:
    a, _ = read_field(args.a)
    g, _ = read_field(args.g)
    if not isinstance(a, VelocityField) or not isinstance(g, ScalarField):
        raise ConfigError("expected a velocity file and a scalar file", "field")
    hs = _h_values(args.h_sweep)
    vals = [metrics.commutator_functional(a, g, KernelSpec(h, a.grid.dim)) for h in hs]
    out = _out_dir(args)
    metrics.write_commutator_csv(hs, vals, out / "commutator.csv", Path(args.g).stem)
    for h, v in zip(hs, vals):
        print(f"h={h:.6g} value={v:.10g}")
    if len(hs) >= 2 and all(v != 0 for v in vals):
        expo = metrics.fit_log_exponent(hs, [abs(v) for v in vals])
        print(f"fitted exponent of |value| vs |log h|: {expo:.4f} (reference rates 1/2 and 1)")
    return EXIT_OK


def cmd_scenario(args) -> int:
    if args.action == "list":
        for name in scenarios.scenario_names():
            print(name)
        return EXIT_OK
    if not args.name:
        raise ConfigError("scenario show needs a name", "name")
    print(json.dumps(config_to_dict(scenarios.scenario(args.name)), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transportlab", description="Viscous nonlinear transport laboratory.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default=".", help="artifact directory (default: current)")
        sp.add_argument("--workers", type=int, default=None, help=f"worker processes (default ${harness.WORKERS_ENV} or 1)")

    sp = sub.add_parser("run", help="run one simulation from a JSON config")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="(epsilon, h) sweep and bound report")
    sp.add_argument("sweep")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("metrics", help="kernel norms of a field dump")
    sp.add_argument("field")
    sp.add_argument("--h", nargs="+", type=float, required=True)
    sp.add_argument("--p", type=int, choices=(1, 2), default=1)
    sp.add_argument("--levels", type=int, default=metrics.DEFAULT_LEVELS)
    common(sp)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("commutator", help="commutator functional over an h sweep")
    sp.add_argument("a")
    sp.add_argument("g")
    sp.add_argument("--h-sweep", nargs="+", type=float, required=True)
    common(sp)
    sp.set_defaults(func=cmd_commutator)

    sp = sub.add_parser("scenario", help="scenario registry")
    sp.add_argument("action", choices=("list", "show"))
    sp.add_argument("name", nargs="?")
    sp.set_defaults(func=cmd_scenario)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OracleSizeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        when = f" at t={exc.time:.6g}" if exc.time is not None else ""
        print(f"numerical failure{when}: {exc.args[0]}", file=sys.stderr)
        return EXIT_NUMERICAL
    except TransportLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
