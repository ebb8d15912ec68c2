"""Command-line entry point.

Subcommands: ``solve`` (one scaled solve with field export), ``metric``
(travel-cost queries), ``tables`` (build or load the effective tables),
``rate``, ``optimality``, ``diluted``, ``defect``, ``a7check`` (experiment
drivers), and ``info``.  Every subcommand except ``info`` requires
``--config``.  Exit status: 0 on success, 1 on usage or configuration
errors, 2 when a pinned assertion fails; diagnostics go to stderr, data to
files.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

import hjhomog
from hjhomog.config import ConfigError, ExperimentConfig, parse_config
from hjhomog.geometry import DomainView
from hjhomog.hj_solver import Grid, solve_dirichlet
from hjhomog.metric import MetricQuery, mbar_star, mstar, mtilde
from hjhomog.storage import (
    table_cache_key,
    tables_cached,
    write_field_csv,
    write_field_slab,
    write_report,
)

USAGE_ERROR = 1
ASSERTION_ERROR = 2


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hjhomog", description=__doc__)
    p.add_argument("--version", action="version", version=hjhomog.__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in (
        "solve",
        "metric",
        "tables",
        "rate",
        "optimality",
        "diluted",
        "defect",
        "a7check",
    ):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="run configuration file")
        sp.add_argument("--out", default=None, help="output directory override")
        sp.add_argument("--cache", default=None, help="cache directory override")
        sp.add_argument("--threads", type=int, default=1, help="worker hint (informational)")
        sp.add_argument(
            "--format", choices=("csv", "slab", "both"), default=None, dest="fmt"
        )
        sp.add_argument(
            "--strict", action="store_true", help="treat warnings as errors"
        )
    sub.add_parser("info")
    return p


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    if args.out:
        cfg.io.out_dir = args.out
    if args.cache:
        cfg.io.cache_dir = args.cache
    if args.fmt:
        cfg.io.formats = ["csv", "slab"] if args.fmt == "both" else [args.fmt]
    if args.threads < 1:
        raise ConfigError(["--threads must be >= 1"])
    return cfg


def _emit_field(cfg: ExperimentConfig, field, stem: str) -> list[str]:
    out = Path(cfg.io.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in cfg.io.formats:
        path = out / f"{stem}.csv"
        write_field_csv(field, path, times=cfg.experiment.times)
        written.append(str(path))
    if "slab" in cfg.io.formats:
        path = out / f"{stem}.slab"
        write_field_slab(field, path)
        written.append(str(path))
    return written


def _cmd_solve(cfg: ExperimentConfig) -> tuple[int, str, dict]:
    from hjhomog.experiments import _solver_grid

    cell = cfg.build_cell()
    model = cfg.build_model()
    data = cfg.build_data()
    results = {"runs": []}
    artifacts = []
    for eps in cfg.experiment.epsilon_list:
        view = DomainView(
            cell=cell, epsilon=eps, eta=cfg.geometry.eta,
            defects=frozenset(map(tuple, cfg.geometry.defects)),
        )
        h = cfg.numerics.h if cfg.numerics.h is not None else eps * cfg.numerics.h_per_eps
        grid = _solver_grid(view, eps, h, data, model.m0, cfg.experiment.horizon, cfg.experiment.window)
        field = solve_dirichlet(
            view, model, data, grid, cfg.experiment.horizon,
            n_dirs=cfg.numerics.stencil_dirs, n_radii=cfg.numerics.stencil_radii,
        )
        artifacts += _emit_field(cfg, field, f"field-eps{eps!r}")
        sl = field.values[-1]
        finite = sl[np.isfinite(sl)]
        results["runs"].append(
            {
                "epsilon": eps,
                "h": h,
                "dt": field.dt,
                "steps": field.n_steps,
                "final_min": float(np.min(finite)),
                "final_max": float(np.max(finite)),
                "frozen_nodes": field.frozen_count,
            }
        )
    results["artifacts"] = artifacts
    summary = f"solved {len(results['runs'])} scale(s); wrote {len(artifacts)} artifact(s)"
    return 0, summary, results


def _cmd_metric(cfg: ExperimentConfig) -> tuple[int, str, dict]:
    cell = cfg.build_cell()
    model = cfg.build_model()
    q = MetricQuery(tau=cfg.query.tau, t=cfg.query.t, y=cfg.query.y, x=cfg.query.x)
    n = cfg.numerics
    res_m = mtilde(cell, model, q, h=n.metric_h, rho=n.metric_rho, max_nodes=n.max_nodes, want_path=False)
    out = {
        "query": {"tau": q.tau, "t": q.t, "y": list(q.y), "x": list(q.x)},
        "mtilde": res_m.cost,
        "snap": [res_m.snap_y, res_m.snap_x],
    }
    if cell.has_holes:
        res_s = mstar(cell, model, q, h=n.metric_h, rho=n.metric_rho, margin=n.metric_margin, max_nodes=n.max_nodes)
        res_b = mbar_star(cell, model, q, k=cfg.query.k, h=n.metric_h, rho=n.metric_rho, margin=n.metric_margin, max_nodes=n.max_nodes)
        out["mstar"] = res_s.cost
        out["mbar"] = {"value": res_b.value, "k": res_b.k, "richardson": res_b.richardson}
    summary = f"mtilde = {res_m.cost:.6g}"
    return 0, summary, out


def _cmd_tables(cfg: ExperimentConfig) -> tuple[int, str, dict]:
    cell = cfg.build_cell()
    model = cfg.build_model()
    n = cfg.numerics
    tables = tables_cached(
        cell, model, cfg.io.cache_dir, cfg.geometry_key(),
        k=n.k, spacing=n.table_spacing, h=n.metric_h, rho=n.metric_rho,
        max_nodes=n.max_nodes,
    )
    key = table_cache_key(cfg.geometry_key(), model.key(), n.k, n.metric_h, n.table_spacing, n.metric_rho)
    fin = np.isfinite(tables.lbar)
    i0 = len(tables.v_axis) // 2
    out = {
        "cache_key": key,
        "k": tables.k,
        "lbar_nodes": int(fin.sum()),
        "lbar_zero": float(tables.lbar[i0, i0]),
        "lbar_min": tables.lbar_min(),
        "hbar_zero": float(tables.hbar[len(tables.p_axis) // 2, len(tables.p_axis) // 2]),
    }
    summary = f"tables ready (key {key}); Lbar(0) = {out['lbar_zero']:.3g}"
    return 0, summary, out


def _cmd_driver(cfg: ExperimentConfig, name: str) -> tuple[int, str, dict]:
    from hjhomog import experiments

    fn = {
        "rate": experiments.rate_experiment,
        "optimality": experiments.optimality_case,
        "diluted": experiments.diluted_experiment,
        "defect": experiments.defect_experiment,
        "a7check": experiments.a7_equivalence,
    }[name]
    result = fn(cfg)
    status = 0 if result.passed else ASSERTION_ERROR
    summary = f"{name}: {'ok' if result.passed else 'ASSERTION FAILED'}"
    if name == "rate" and result.report.get("slope") is not None:
        summary += f" (slope {result.report['slope']:.3f})"
    return status, summary, result.report


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; remap to the documented code
        code = exc.code if isinstance(exc.code, int) else 0
        return USAGE_ERROR if code != 0 else 0

    if args.command == "info":
        print(f"hjhomog {hjhomog.__version__}")
        print("default cache directory: ./cache (override with --cache or [io])")
        print("potential catalog: zero, constant, bump, trig, expr")
        print("data catalog: const, cone, cosine, expr")
        print(
            "drivers: solve, metric, tables, rate, optimality, diluted, defect, a7check"
        )
        return 0

    try:
        cfg = _load(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return USAGE_ERROR

    try:
        with warnings.catch_warnings():
            if args.strict:
                warnings.simplefilter("error")
            if args.command == "solve":
                status, summary, results = _cmd_solve(cfg)
            elif args.command == "metric":
                status, summary, results = _cmd_metric(cfg)
            elif args.command == "tables":
                status, summary, results = _cmd_tables(cfg)
            else:
                status, summary, results = _cmd_driver(cfg, args.command)
    except (ConfigError, ValueError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR

    out_dir = Path(cfg.io.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / f"report-{args.command}.json"
    write_report(report_path, cfg.echo(), results)
    print(summary, file=sys.stderr)
    print(f"report: {report_path}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
