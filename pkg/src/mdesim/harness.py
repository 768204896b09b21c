"""Monte Carlo experiment orchestration and persistence.

A sweep evaluates the distributed estimator against the naive and ideal
benchmarks over an SNR grid.  Each (snr, replicate) cell draws a fresh
topology and snapshot from a Philox stream keyed by (master_seed, cell
index), so results are reproducible and independent of worker scheduling;
aggregation always runs in cell order, which makes the emitted CSV
byte-identical for any thread count.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__
from .engine import (EngineConfig, EngineDivergenceError, RunResult, StepSchedule,
                     TRACE_COLUMNS, detection_ordering_holds, power_schedule, run,
                     washout_schedule)
from .estimators import ideal_estimate, naive_estimate
from .model import ModelParams, ParameterError, rng_stream, sample_snapshot
from .topology import NetworkTopology, random_geometric_graph, read_edge_list

FP_RESIDUAL_TOL = 1e-3

CSV_HEADER = "snr_db,estimator,mse,bias,std_err,conv_rate,fp_pass,ord_pass,mean_iters"


@dataclass(frozen=True)
class TopologySettings:
    kind: str = "rgg"  # "rgg" | "edge_list"
    radius: float = 0.3
    edge_list_path: str | None = None

    def build(self, n: int, seed: int) -> NetworkTopology:
        if self.kind == "rgg":
            return random_geometric_graph(n, self.radius, seed)
        if self.kind == "edge_list":
            if not self.edge_list_path:
                raise ParameterError("edge_list topology needs edge_list_path")
            return read_edge_list(self.edge_list_path, n)
        raise ParameterError(f"unknown topology kind {self.kind!r}")


@dataclass(frozen=True)
class ScheduleSettings:
    family: str = "washout"  # "washout" | "power"
    head: float = 0.13
    head_decay: float = 0.99
    tail: float = 0.002
    db: float | None = None  # None: 1/(max_degree+1)
    eps: float = 0.98
    da: float = 0.5  # power family only

    def build(self, topo: NetworkTopology) -> StepSchedule:
        if self.family == "washout":
            return washout_schedule(topo.max_degree, head=self.head,
                                    head_decay=self.head_decay, tail=self.tail,
                                    db=self.db, eps=self.eps)
        if self.family == "power":
            db = self.db if self.db is not None else 1.0 / (topo.max_degree + 1)
            return power_schedule(da=self.da, db=db, eps=self.eps)
        raise ParameterError(f"unknown schedule family {self.family!r}")


@dataclass(frozen=True)
class EngineSettings:
    delta: float = 1e-9
    epsilon_stop: float = 1e-6
    max_iters: int = 3000
    include_self_in_init: bool = False

    def build(self, record_trace: bool = False) -> EngineConfig:
        return EngineConfig(delta=self.delta, epsilon_stop=self.epsilon_stop,
                            max_iters=self.max_iters, record_trace=record_trace,
                            include_self_in_init=self.include_self_in_init)


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 50
    sigma: float = 1.0
    p1: float = 0.5
    snr_grid_db: tuple[float, ...] = tuple(range(-30, 45, 5))
    replicates: int = 500
    master_seed: int = 20240901
    parallelism: int = 1
    output_dir: str = "out"
    topology: TopologySettings = field(default_factory=TopologySettings)
    schedule: ScheduleSettings = field(default_factory=ScheduleSettings)
    engine: EngineSettings = field(default_factory=EngineSettings)

    def __post_init__(self):
        if self.replicates < 1:
            raise ParameterError("replicates must be >= 1")
        if not all(math.isfinite(s) for s in self.snr_grid_db):
            raise ParameterError("snr grid entries must be finite")

    def theta_for(self, snr_db: float) -> float:
        return self.sigma * 10.0 ** (snr_db / 20.0)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        data = dict(raw)
        for key, sub in (("topology", TopologySettings),
                         ("schedule", ScheduleSettings),
                         ("engine", EngineSettings)):
            if key in data and isinstance(data[key], dict):
                data[key] = sub(**data[key])
        if "snr_grid_db" in data:
            data["snr_grid_db"] = tuple(float(s) for s in data["snr_grid_db"])
        return cls(**data)

    def config_hash(self) -> str:
        """Hash of the determinism-relevant fields; parallelism and output
        location deliberately excluded so thread count cannot change bytes."""
        payload = self.to_dict()
        payload.pop("parallelism", None)
        payload.pop("output_dir", None)
        canon = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot load config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


def paper_sweep_config(profile: str = "full", **overrides) -> ExperimentConfig:
    """The headline comparison: 50 nodes on a unit square, radius 0.3,
    p1 = 0.5, unit noise, SNR -30..40 dB.  The 'ci' profile shrinks it to
    100 replicates, 1000 iterations, 10 dB steps."""
    if profile == "full":
        base = dict(snr_grid_db=tuple(float(s) for s in range(-30, 45, 5)),
                    replicates=500, engine=EngineSettings(max_iters=3000))
    elif profile == "ci":
        base = dict(snr_grid_db=tuple(float(s) for s in range(-30, 50, 10)),
                    replicates=100, engine=EngineSettings(max_iters=1000))
    else:
        raise ParameterError(f"unknown profile {profile!r}")
    base.update(overrides)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellResult:
    snr_idx: int
    rep: int
    snr_db: float
    mde_err: float
    naive_err: float
    ideal_err: float  # nan when the ideal estimate is undefined
    converged: bool
    iterations: int
    residual: float
    ordering_ok: bool
    spread: float
    failed: bool


def _run_cell(config: ExperimentConfig, snr_idx: int, rep: int) -> CellResult:
    snr_db = config.snr_grid_db[snr_idx]
    theta = config.theta_for(snr_db)
    params = ModelParams(theta=theta, sigma=config.sigma, p1=config.p1, n=config.n)
    cell = snr_idx * config.replicates + rep
    seeds = rng_stream(config.master_seed, cell)
    topo_seed = int(seeds.integers(0, 2 ** 63))
    snap_seed = int(seeds.integers(0, 2 ** 63))
    topo = config.topology.build(config.n, topo_seed)
    snapshot = sample_snapshot(params, snap_seed)

    naive_err = naive_estimate(snapshot.y, config.p1) - theta
    ideal = ideal_estimate(snapshot.y, snapshot.h)
    ideal_err = (ideal.estimate - theta) if ideal.defined else math.nan

    schedule = config.schedule.build(topo)
    engine_cfg = config.engine.build()
    try:
        result = run(snapshot, topo, schedule, engine_cfg)
    except EngineDivergenceError:
        return CellResult(snr_idx=snr_idx, rep=rep, snr_db=snr_db,
                          mde_err=math.nan, naive_err=naive_err,
                          ideal_err=ideal_err, converged=False, iterations=0,
                          residual=math.nan, ordering_ok=False,
                          spread=math.nan, failed=True)
    ordering = detection_ordering_holds(result, snapshot) if result.converged else False
    # node-1 readout (index 0) mirrors the reference measurement
    mde_err = float(result.final_estimates[0]) - theta
    return CellResult(snr_idx=snr_idx, rep=rep, snr_db=snr_db,
                      mde_err=mde_err, naive_err=naive_err, ideal_err=ideal_err,
                      converged=result.converged,
                      iterations=result.iterations_used,
                      residual=result.fixed_point_residual,
                      ordering_ok=ordering,
                      spread=result.consensus_spread, failed=False)


def _run_cell_packed(args: tuple) -> CellResult:
    return _run_cell(*args)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    snr_db: float
    estimator: str
    mse: float
    bias: float
    std_err: float
    conv_rate: float
    fp_pass: float
    ord_pass: float
    mean_iters: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    cells: tuple[CellResult, ...]
    config: ExperimentConfig | None = None

    def row(self, snr_db: float, estimator: str) -> SweepRow:
        for r in self.rows:
            if r.estimator == estimator and abs(r.snr_db - snr_db) < 1e-9:
                return r
        raise KeyError((snr_db, estimator))

    def failure_counts(self) -> dict[float, int]:
        out: dict[float, int] = {}
        for c in self.cells:
            if c.failed:
                out[c.snr_db] = out.get(c.snr_db, 0) + 1
        return out


def _mse_stats(errors: list[float]) -> tuple[float, float, float]:
    """(mse, bias, standard error of the mse) via ordered fsum accumulation."""
    if not errors:
        return math.nan, math.nan, math.nan
    sq = [e * e for e in errors]
    count = len(sq)
    mse = math.fsum(sq) / count
    bias = math.fsum(errors) / count
    var_sq = math.fsum((s - mse) ** 2 for s in sq) / count
    return mse, bias, math.sqrt(var_sq / count)


def run_sweep(config: ExperimentConfig) -> SweepResult:
    """Run every (snr, replicate) cell and aggregate per-estimator rows.

    Cells are independent; with parallelism > 1 they are dispatched to a
    process pool, then always reduced in cell order.
    """
    jobs = [(config, si, rep)
            for si in range(len(config.snr_grid_db))
            for rep in range(config.replicates)]
    if config.parallelism > 1:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            chunk = max(1, len(jobs) // (config.parallelism * 8))
            results = list(pool.map(_run_cell_packed, jobs, chunksize=chunk))
    else:
        results = [_run_cell_packed(j) for j in jobs]

    rows: list[SweepRow] = []
    for si, snr_db in enumerate(config.snr_grid_db):
        cells = [c for c in results if c.snr_idx == si]
        ok = [c for c in cells if not c.failed]
        n_all = len(cells)
        conv = [c for c in ok if c.converged]
        mde_mse, mde_bias, mde_se = _mse_stats([c.mde_err for c in ok])
        nv_mse, nv_bias, nv_se = _mse_stats([c.naive_err for c in cells])
        id_errs = [c.ideal_err for c in cells if not math.isnan(c.ideal_err)]
        id_mse, id_bias, id_se = _mse_stats(id_errs)
        fp_pass = (sum(1 for c in conv if c.residual < FP_RESIDUAL_TOL) / n_all
                   if n_all else math.nan)
        ord_pass = (sum(1 for c in conv if c.ordering_ok) / len(conv)
                    if conv else 1.0)
        mean_iters = (math.fsum(c.iterations for c in ok) / len(ok)
                      if ok else math.nan)
        rows.append(SweepRow(snr_db, "mde", mde_mse, mde_bias, mde_se,
                             len(conv) / n_all if n_all else math.nan,
                             fp_pass, ord_pass, mean_iters))
        rows.append(SweepRow(snr_db, "naive", nv_mse, nv_bias, nv_se,
                             math.nan, math.nan, math.nan, math.nan))
        rows.append(SweepRow(snr_db, "ideal", id_mse, id_bias, id_se,
                             math.nan, math.nan, math.nan, math.nan))
    return SweepResult(rows=tuple(rows), cells=tuple(results), config=config)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _provenance_line(config: ExperimentConfig | None) -> str:
    if config is None:
        return f"# mdesim v{__version__}"
    return (f"# mdesim v{__version__} seed={config.master_seed} "
            f"config={config.config_hash()}")


def emit_csv(result: SweepResult, path: str | Path) -> None:
    """Aggregated per-(snr, estimator) table with a provenance comment."""
    lines = [_provenance_line(result.config)]
    for snr_db, count in sorted(result.failure_counts().items()):
        lines.append(f"# failed_replicates snr_db={_fmt(snr_db)} count={count}")
    lines.append(CSV_HEADER)
    for r in result.rows:
        lines.append(",".join([
            _fmt(r.snr_db), r.estimator, _fmt(r.mse), _fmt(r.bias),
            _fmt(r.std_err), _fmt(r.conv_rate), _fmt(r.fp_pass),
            _fmt(r.ord_pass), _fmt(r.mean_iters)]))
    Path(path).write_text("\n".join(lines) + "\n")


def parse_sweep_csv(path: str | Path) -> tuple[SweepRow, ...]:
    rows = []
    header_seen = False
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if line != CSV_HEADER:
                raise ParameterError(f"unexpected header {line!r}")
            header_seen = True
            continue
        parts = line.split(",")
        rows.append(SweepRow(float(parts[0]), parts[1],
                             *[float(p) for p in parts[2:]]))
    return tuple(rows)


def emit_details_csv(result: SweepResult, path: str | Path) -> None:
    """Per-replicate cells: convergence, residual, spread, failure markers."""
    lines = [_provenance_line(result.config),
             "snr_db,rep,mde_err,naive_err,ideal_err,converged,iterations,"
             "residual,ordering_ok,spread,failed"]
    for c in result.cells:
        lines.append(",".join([
            _fmt(c.snr_db), str(c.rep), _fmt(c.mde_err), _fmt(c.naive_err),
            _fmt(c.ideal_err), str(int(c.converged)), str(c.iterations),
            _fmt(c.residual), str(int(c.ordering_ok)), _fmt(c.spread),
            str(int(c.failed))]))
    Path(path).write_text("\n".join(lines) + "\n")


def emit_plotdata(result: RunResult, path: str | Path,
                  provenance: str | None = None) -> None:
    """Per-iteration node traces of a single run, one row per (t, node)."""
    if result.trace is None:
        raise ParameterError("run was executed without record_trace")
    lines = [provenance if provenance is not None else f"# mdesim v{__version__}",
             ",".join(TRACE_COLUMNS)]
    for row in result.trace:
        cells = [str(int(row[0])), str(int(row[1]))]
        cells += [_fmt(v) for v in row[2:9]]
        cells += [str(int(row[9])), str(int(row[10]))]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
