"""Command-line interface.

Subcommands: `simulate` (one run with optional trace dump and convergence
figure), `sweep` (MSE-versus-SNR comparison with CSV and figure outputs),
`analyze` (closed-form and Monte Carlo tables), `oracle` (small-instance
enumeration checks).  Exit codes: 0 success, 1 configuration/usage error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from ._version import __version__
from .analysis import (MixtureDistribution, asymptotic_trimmed_mean,
                       central_orderstat_normal_approx, decision_region,
                       event_probabilities, order_stat_moments)
from .engine import run as engine_run
from .estimators import centralized_mde_oracle, psi, psi_binomial_approx
from .harness import (ExperimentConfig, emit_csv, emit_details_csv, emit_plotdata,
                      load_config, paper_sweep_config, run_sweep)
from .model import ModelParams, ParameterError, rng_stream, sample_snapshot


class _Parser(argparse.ArgumentParser):
    # spec'd exit code for usage errors is 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _apply_set_overrides(config: ExperimentConfig, pairs: list[str]) -> ExperimentConfig:
    data = config.to_dict()
    for pair in pairs:
        if "=" not in pair:
            raise ParameterError(f"--set expects dotted.path=value, got {pair!r}")
        dotted, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            if part not in node or not isinstance(node[part], dict):
                raise ParameterError(f"unknown config path {dotted!r}")
            node = node[part]
        if leaf not in node:
            raise ParameterError(f"unknown config field {dotted!r}")
        node[leaf] = value
    return ExperimentConfig.from_dict(data)


def _resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "profile", None):
        base = paper_sweep_config(args.profile)
        if args.config:
            raise ParameterError("--profile and --config are mutually exclusive")
        config = base
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["master_seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        updates["parallelism"] = args.threads
    if getattr(args, "out", None) is not None:
        updates["output_dir"] = args.out
    if updates:
        config = dataclasses.replace(config, **updates)
    if getattr(args, "max_iters", None) is not None:
        config = dataclasses.replace(
            config, engine=dataclasses.replace(config.engine, max_iters=args.max_iters))
    if getattr(args, "replicates", None) is not None:
        config = dataclasses.replace(config, replicates=args.replicates)
    if getattr(args, "set", None):
        config = _apply_set_overrides(config, args.set)
    return config


def _out_dir(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_simulate(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(config)
    snr_db = args.snr_db
    params = ModelParams(theta=config.theta_for(snr_db), sigma=config.sigma,
                         p1=config.p1, n=config.n)
    seeds = rng_stream(config.master_seed, 0)
    topo = config.topology.build(config.n, int(seeds.integers(0, 2 ** 63)))
    snapshot = sample_snapshot(params, int(seeds.integers(0, 2 ** 63)))
    schedule = config.schedule.build(topo)
    engine_cfg = config.engine.build(record_trace=not args.no_trace)
    t0 = time.perf_counter()
    result = engine_run(snapshot, topo, schedule, engine_cfg)
    elapsed = time.perf_counter() - t0
    print(f"run: n={config.n} snr={snr_db:g} dB iterations={result.iterations_used} "
          f"converged={result.converged} spread={result.consensus_spread:.3e} "
          f"residual={result.fixed_point_residual:.3e} ({elapsed:.2f}s)")
    print(f"node-0 estimate: {result.final_estimates[0]:.6f} "
          f"(target {params.theta:.6f})")
    if not args.no_trace:
        trace_path = out / "trace.csv"
        emit_plotdata(result, trace_path,
                      provenance=f"# mdesim v{__version__} seed={config.master_seed} "
                                 f"config={config.config_hash()}")
        print(f"wrote {trace_path}")
        if not args.no_figures:
            from .figures import render_convergence_figure
            fig_path = out / "convergence.png"
            render_convergence_figure(result, fig_path)
            print(f"wrote {fig_path}")
    return 0


def _cmd_sweep(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(config)
    t0 = time.perf_counter()
    result = run_sweep(config)
    elapsed = time.perf_counter() - t0
    csv_path = out / "sweep.csv"
    emit_csv(result, csv_path)
    emit_details_csv(result, out / "sweep_details.csv")
    print(f"sweep: {len(config.snr_grid_db)} SNR points x {config.replicates} "
          f"replicates in {elapsed:.1f}s -> {csv_path}")
    for row in result.rows:
        if row.estimator == "mde":
            print(f"  snr={row.snr_db:>6.1f} dB  mde_mse={row.mse:.4e}  "
                  f"conv={row.conv_rate:.2f}  iters={row.mean_iters:.0f}")
    if not args.no_figures:
        from .figures import render_sweep_figure
        fig_path = out / "sweep.png"
        render_sweep_figure(result, fig_path)
        print(f"wrote {fig_path}")
    return 0


def _dist_from_args(args) -> MixtureDistribution:
    return MixtureDistribution(theta=args.theta, sigma=args.sigma, p1=args.p1)


def _write_table(path: str | None, header: str, rows: list[str]) -> None:
    if path:
        Path(path).write_text(f"# mdesim v{__version__}\n" + header + "\n"
                              + "\n".join(rows) + "\n")
        print(f"wrote {path}")


def _cmd_analyze(args) -> int:
    if args.what == "psi":
        value = psi(args.n, args.p1)
        print(f"psi({args.n}, {args.p1}) = {value:.6g}")
        if abs(args.p1 - 0.5) < 1e-12:
            print(f"binomial shortcut (2-2^-n)/(n+1) = {psi_binomial_approx(args.n):.6g}")
        _write_table(args.out, "n,p1,psi", [f"{args.n},{args.p1},{value!r}"])
        return 0
    if args.what == "moments":
        dist = _dist_from_args(args)
        rows = []
        for i in range(1, args.n + 1):
            s = order_stat_moments(dist, args.n, i)
            rows.append(f"{args.n},{args.p1!r},{args.theta!r},{args.sigma!r},"
                        f"{i},{s.mean!r},{s.variance!r}")
            print(f"i={i:>4}: mean={s.mean: .6f} var={s.variance:.6f}")
        _write_table(args.out, "n,p1,theta,sigma,i,mean,variance", rows)
        return 0
    if args.what == "regions":
        rows = []
        for y in args.y:
            region = decision_region(y, args.sigma, args.p1)
            print(f"y={y: .4f}: {region.kind.value:8s} "
                  f"[{region.lower: .6f}, {region.upper: .6f}]")
            rows.append(f"{args.p1!r},{args.sigma!r},{y!r},{region.kind.value},"
                        f"{region.lower!r},{region.upper!r}")
        _write_table(args.out, "p1,sigma,y,kind,lower,upper", rows)
        return 0
    if args.what == "trimmed":
        dist = _dist_from_args(args)
        value = asymptotic_trimmed_mean(dist, args.q, args.branch)
        print(f"asymptotic trimmed mean (q={args.q}, {args.branch}) = {value:.8f}")
        _write_table(args.out, "p1,theta,sigma,q,branch,limit",
                     [f"{args.p1!r},{args.theta!r},{args.sigma!r},{args.q!r},"
                      f"{args.branch},{value!r}"])
        return 0
    if args.what == "normal-approx":
        dist = _dist_from_args(args)
        mean, var = central_orderstat_normal_approx(dist, args.n, args.q)
        print(f"order statistic ~ N({mean:.8f}, {var:.3e}) at n={args.n}, q={args.q}")
        _write_table(args.out, "n,p1,theta,sigma,q,mean,variance",
                     [f"{args.n},{args.p1!r},{args.theta!r},{args.sigma!r},"
                      f"{args.q!r},{mean!r},{var!r}"])
        return 0
    if args.what == "events":
        dist = _dist_from_args(args)
        ev = event_probabilities(dist, args.n, args.branch, args.samples, args.seed or 0)
        rows = []
        for k in range(1, args.n + 1):
            print(f"k={k:>3}: P={ev.probs[k-1]:.5f} +- {ev.std_err[k-1]:.5f}")
            rows.append(f"{args.n},{args.p1!r},{args.theta!r},{args.sigma!r},"
                        f"{args.branch},{k},{ev.probs[k-1]!r},{ev.std_err[k-1]!r}")
        print(f"residual mass = {ev.residual_mass:.5f}, "
              f"overlap mass = {ev.overlap_mass:.5f}")
        _write_table(args.out, "n,p1,theta,sigma,branch,k,prob,std_err", rows)
        return 0
    raise ParameterError(f"unknown analyze target {args.what!r}")


def _cmd_oracle(args) -> int:
    y = np.array([float(v) for v in args.y.split(",")])
    params = ModelParams(theta=args.theta, sigma=args.sigma, p1=args.p1, n=y.size)
    report = centralized_mde_oracle(y, params, delta=args.delta)
    branch = "plus" if report.branch_plus else "minus"
    print(f"branch: {branch} (mean(y) = {y.mean():.6f})")
    print(f"self-consistent fixed points ({len(report.fixed_points)}):")
    for value, pattern in report.fixed_points:
        print(f"  estimate={value: .8f}  pattern={''.join(map(str, pattern))}")
    print(f"selected: {report.estimate:.8f} pattern={''.join(map(str, report.pattern))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdesim",
                     description="distributed detection-estimation simulator")
    parser.add_argument("--version", action="version", version=f"mdesim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = dict(config=("--config", dict(type=str, default=None,
                                           help="JSON experiment config")),
                  seed=("--seed", dict(type=int, default=None)),
                  out=("--out", dict(type=str, default=None, help="output directory")),
                  max_iters=("--max-iters", dict(type=int, default=None)),
                  set=("--set", dict(action="append", default=[], metavar="PATH=VAL",
                                     help="override a config field, e.g. "
                                          "--set schedule.tail=0.001")))

    sim = sub.add_parser("simulate", help="single run with optional trace dump")
    for flag, kw in common.values():
        sim.add_argument(flag, **kw)
    sim.add_argument("--snr-db", type=float, default=40.0)
    sim.add_argument("--no-trace", action="store_true")
    sim.add_argument("--no-figures", action="store_true")
    sim.set_defaults(func=_cmd_simulate)

    swp = sub.add_parser("sweep", help="MSE-vs-SNR estimator comparison")
    for flag, kw in common.values():
        swp.add_argument(flag, **kw)
    swp.add_argument("--threads", type=int, default=None)
    swp.add_argument("--replicates", type=int, default=None)
    swp.add_argument("--profile", choices=("full", "ci"), default=None,
                     help="preset experiment scale")
    swp.add_argument("--no-figures", action="store_true")
    swp.set_defaults(func=_cmd_sweep)

    ana = sub.add_parser("analyze", help="closed-form and Monte Carlo tables")
    ana.add_argument("what", choices=("psi", "moments", "regions", "trimmed",
                                      "normal-approx", "events"))
    ana.add_argument("--n", type=int, default=50)
    ana.add_argument("--p1", type=float, default=0.5)
    ana.add_argument("--theta", type=float, default=10.0)
    ana.add_argument("--sigma", type=float, default=1.0)
    ana.add_argument("--q", type=float, default=0.5)
    ana.add_argument("--branch", choices=("plus", "minus"), default="plus")
    ana.add_argument("--samples", type=int, default=10 ** 5)
    ana.add_argument("--seed", type=int, default=0)
    ana.add_argument("--y", type=float, nargs="+", default=[0.0, 1.0, 3.0])
    ana.add_argument("--out", type=str, default=None, help="CSV output path")
    ana.set_defaults(func=_cmd_analyze)

    orc = sub.add_parser("oracle", help="small-instance fixed-point enumeration")
    orc.add_argument("--y", type=str, required=True,
                     help="comma-separated observations, e.g. 10,10,0")
    orc.add_argument("--theta", type=float, default=0.0)
    orc.add_argument("--sigma", type=float, default=1.0)
    orc.add_argument("--p1", type=float, default=0.5)
    orc.add_argument("--delta", type=float, default=1e-9)
    orc.set_defaults(func=_cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
