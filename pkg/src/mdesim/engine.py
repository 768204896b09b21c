"""Synchronous simulator for the mixed detection-estimation iteration.

Each node keeps a positive-branch and a negative-branch estimate.  One sweep
at time t does, in order:

  1. per-node MAP re-detection of the validity index from the current branch
     estimates,
  2. consensus + innovation updates of the intermediate fields u and v
     (u tracks detected signal mass, v tracks detected validity mass) and a
     pure consensus update of the local estimate of the observation mean,
  3. branch estimates theta+ = max(u+/(v+ + delta), 0) and
     theta- = min(u-/(v- + delta), 0), with the reported estimate selected by
     the sign of the local observation-mean estimate.

All right-hand sides read the previous state before any write, so a run is
deterministic given (snapshot, topology, schedule, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .model import FieldSnapshot, ParameterError
from .topology import NetworkTopology


class EngineDivergenceError(RuntimeError):
    """Non-finite state detected; the consensus gain is too large for the graph."""


class NotConvergedError(RuntimeError):
    """Operation requires a run that satisfied the stopping rule."""


# ---------------------------------------------------------------------------
# step-size schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepSchedule:
    """Gain sequences alpha(t) (innovation) and beta(t) (consensus).

    Admissibility (checked numerically by `validate`, and symbolically via
    `divergent_sums` for the built-in families):

      * 0 < alpha(t) < 1 and 0 < beta(t) < 1,
      * alpha(t) -> 0 and beta(t) -> 0,
      * beta(t)/alpha(t) nondecreasing and unbounded,
      * partial sums of alpha and of beta diverge.
    """

    alpha: Callable[[int], float]
    beta: Callable[[int], float]
    description: str
    params: dict = field(default_factory=dict)
    # True when the family is known analytically to have divergent gain sums
    # (power-law tails with exponent <= 1); None means "numeric check only".
    divergent_sums: bool | None = None

    def validate(self, horizon: int = 2000, ratio_growth: float = 10.0,
                 sum_floor: float = 1.0) -> None:
        """Probe the four admissibility conditions over t = 1..horizon."""
        t = np.arange(1, horizon + 1)
        a = np.array([self.alpha(int(s)) for s in t])
        b = np.array([self.beta(int(s)) for s in t])
        if not (np.all(a > 0) and np.all(a < 1)):
            raise ParameterError(f"alpha(t) must stay in (0,1): {self.description}")
        if not (np.all(b > 0) and np.all(b < 1)):
            raise ParameterError(f"beta(t) must stay in (0,1): {self.description}")
        if not (a[-1] < a[0] and b[-1] < b[0]):
            raise ParameterError(f"alpha and beta must decay: {self.description}")
        ratio = b / a
        if np.any(np.diff(ratio) < -1e-12):
            raise ParameterError(f"beta/alpha must be nondecreasing: {self.description}")
        if ratio[-1] < ratio_growth * ratio[0]:
            raise ParameterError(
                f"beta/alpha grew only {ratio[-1] / ratio[0]:.2f}x over the probe "
                f"horizon; unbounded growth proxy failed: {self.description}")
        if self.divergent_sums is None:
            if a.sum() < sum_floor or b.sum() < sum_floor:
                raise ParameterError(
                    f"partial gain sums below {sum_floor} over the probe horizon "
                    f"(divergence proxy failed): {self.description}")
        elif not self.divergent_sums:
            raise ParameterError(f"gain sums do not diverge: {self.description}")


def power_schedule(da: float = 0.5, db: float = 0.05, eps: float = 0.25) -> StepSchedule:
    """Pure power-law family alpha = da/t, beta = db/t^(1-eps), eps in (0,1)."""
    if not (0 < da < 1 and 0 < db < 1 and 0 < eps < 1):
        raise ParameterError("power schedule needs 0<da<1, 0<db<1, 0<eps<1")
    return StepSchedule(
        alpha=lambda t: da / t,
        beta=lambda t: db / t ** (1.0 - eps),
        description=f"alpha = {da}/t, beta = {db}/t^{1.0 - eps:g}",
        params={"da": da, "db": db, "eps": eps},
        divergent_sums=True,
    )


def washout_schedule(max_degree: int, head: float = 0.13, head_decay: float = 0.99,
                     tail: float = 0.002, db: float | None = None,
                     eps: float = 0.98) -> StepSchedule:
    """Default schedule: geometric innovation warm-up plus harmonic tail.

    alpha(t) = head * head_decay^(t-1) + tail/t,
    beta(t)  = db / t^(1-eps),  db defaulting to 1/(max_degree+1) so that
    beta(1) * (max_degree + 1) <= 1 keeps the consensus step contractive.

    The warm-up phase accumulates enough total innovation gain
    (sum ~ head/(1-head_decay)) to overwrite early detection mistakes, while
    the harmonic tail keeps the gain sum divergent but lets the consensus
    term dominate, which is what drives the final inter-node agreement.
    """
    if max_degree < 0:
        raise ParameterError("max_degree must be >= 0")
    if db is None:
        db = 1.0 / (max_degree + 1) if max_degree >= 1 else 0.5
    if not (0 < db < 1 and 0 < eps < 1 and 0 < head < 1 and 0 < head_decay < 1
            and 0 < tail < 1 and head + tail < 1):
        raise ParameterError("washout schedule parameters out of range")
    return StepSchedule(
        alpha=lambda t: head * head_decay ** (t - 1) + tail / t,
        beta=lambda t: db / t ** (1.0 - eps),
        description=(f"alpha = {head}*{head_decay}^(t-1) + {tail}/t, "
                     f"beta = {db:g}/t^{1.0 - eps:g}"),
        params={"head": head, "head_decay": head_decay, "tail": tail,
                "db": db, "eps": eps},
        divergent_sums=True,
    )


def default_schedule(topo: NetworkTopology) -> StepSchedule:
    return washout_schedule(topo.max_degree)


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EngineConfig:
    delta: float = 1e-9
    epsilon_stop: float = 1e-6
    max_iters: int = 3000
    record_trace: bool = False
    include_self_in_init: bool = False

    def __post_init__(self):
        if not (self.delta > 0 and self.epsilon_stop > 0 and self.max_iters >= 1):
            raise ParameterError("need delta > 0, epsilon_stop > 0, max_iters >= 1")


@dataclass(frozen=True)
class NodeState:
    """Per-node view of the iteration state at one time step."""

    theta_plus: float
    theta_minus: float
    u_plus: float
    u_minus: float
    v_plus: float
    v_minus: float
    ybar_hat: float
    h_plus: int
    h_minus: int


@dataclass(frozen=True)
class EngineState:
    """Vectorized state at time t.

    theta_plus/theta_minus hold the branch estimates for time t; u_*, v_* hold
    the intermediate fields from the preceding sweep (time t-1); ybar holds
    the consensus estimate of the observation mean at time t (pinned to y for
    t = 1); ratio_* are u/(v+delta) from the preceding sweep, kept for the
    stopping rule.
    """

    t: int
    theta_plus: np.ndarray
    theta_minus: np.ndarray
    u_plus: np.ndarray
    u_minus: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray
    ybar: np.ndarray
    h_plus: np.ndarray
    h_minus: np.ndarray
    ratio_plus: np.ndarray
    ratio_minus: np.ndarray

    def node_states(self) -> list[NodeState]:
        return [NodeState(theta_plus=float(self.theta_plus[i]),
                          theta_minus=float(self.theta_minus[i]),
                          u_plus=float(self.u_plus[i]), u_minus=float(self.u_minus[i]),
                          v_plus=float(self.v_plus[i]), v_minus=float(self.v_minus[i]),
                          ybar_hat=float(self.ybar[i]),
                          h_plus=int(self.h_plus[i]), h_minus=int(self.h_minus[i]))
                for i in range(len(self.theta_plus))]

    def selected_estimates(self) -> np.ndarray:
        """Estimates chosen branch-wise by the sign of the local ybar."""
        return np.where(self.ybar >= 0.0, self.theta_plus, self.theta_minus)


@dataclass(frozen=True)
class RunResult:
    final_estimates: np.ndarray
    iterations_used: int
    converged: bool
    final_h_plus: np.ndarray
    final_h_minus: np.ndarray
    final_ybar: np.ndarray
    fixed_point_residual: float
    trace: np.ndarray | None = None

    @property
    def consensus_spread(self) -> float:
        return float(self.final_estimates.max() - self.final_estimates.min())


TRACE_COLUMNS = ("t", "node", "theta_plus", "theta_minus", "u_plus", "v_plus",
                 "u_minus", "v_minus", "ybar_hat", "h_plus", "h_minus")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def detect(theta_hat, y, sigma: float, p1: float):
    """MAP validity decision: 1 iff theta^2 - 2*y*theta <= 2 sigma^2 ln(p1/p0).

    Ties take the 1 branch.  Accepts scalars or arrays (broadcasting).
    """
    if not (sigma > 0 and 0.0 < p1 < 1.0):
        raise ParameterError("detect needs sigma > 0 and p1 in (0, 1)")
    threshold = 2.0 * sigma * sigma * math.log(p1 / (1.0 - p1))
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = (theta_hat * theta_hat - 2.0 * y * theta_hat <= threshold).astype(np.int64)
    return out if out.ndim else int(out)


def initialize(snapshot: FieldSnapshot, topo: NetworkTopology, p1: float,
               include_self_in_init: bool = False) -> EngineState:
    """State at time 1: neighborhood averages, one detection pass, u/v seeds.

    theta_i(1) = (sum of neighbor observations) / (|neighborhood| * p1); the
    neighborhood excludes the node itself unless include_self_in_init is set,
    which is also the only way an isolated node can be initialized.
    """
    if topo.n != snapshot.n:
        raise ParameterError(f"topology has {topo.n} nodes, snapshot has {snapshot.n}")
    y = snapshot.y
    sigma = snapshot.params.sigma
    adj = topo.adjacency_matrix()
    if include_self_in_init:
        adj = adj + np.eye(topo.n)
    counts = adj.sum(axis=1)
    if np.any(counts == 0):
        isolated = int(np.nonzero(counts == 0)[0][0])
        raise ParameterError(
            f"node {isolated} has no neighbors; enable include_self_in_init "
            f"to fall back to its own observation")
    theta1 = (adj @ y) / (counts * p1)
    h1 = detect(theta1, y, sigma, p1).astype(np.float64)
    u0 = y * h1
    v0 = h1.copy()
    # ratio_* hold u(0)/(v(0)+delta) for the stopping rule; delta lives in the
    # engine config, so run() fills them in before the first sweep.
    return EngineState(
        t=1,
        theta_plus=theta1.copy(), theta_minus=theta1.copy(),
        u_plus=u0.copy(), u_minus=u0.copy(),
        v_plus=v0.copy(), v_minus=v0.copy(),
        ybar=y.copy(),
        h_plus=h1.astype(np.int64), h_minus=h1.astype(np.int64),
        ratio_plus=np.zeros_like(y), ratio_minus=np.zeros_like(y),
    )


def _sweep(state: EngineState, y: np.ndarray, sigma: float, p1: float,
           delta: float, a: float, b: float, lap: np.ndarray, max_degree: int,
           t: int) -> EngineState:
    hp = detect(state.theta_plus, y, sigma, p1).astype(np.float64)
    hm = detect(state.theta_minus, y, sigma, p1).astype(np.float64)

    up = state.u_plus - b * (lap @ state.u_plus) + a * (y * hp - state.u_plus)
    vp = state.v_plus - b * (lap @ state.v_plus) + a * (hp - state.v_plus)
    um = state.u_minus - b * (lap @ state.u_minus) + a * (y * hm - state.u_minus)
    vm = state.v_minus - b * (lap @ state.v_minus) + a * (hm - state.v_minus)

    # ybar(1) is pinned to y by initialization; its consensus recursion starts
    # at t = 2.
    ybar = state.ybar if t == 1 else state.ybar - b * (lap @ state.ybar)

    rp = up / (vp + delta)
    rm = um / (vm + delta)
    theta_plus = np.maximum(rp, 0.0)
    theta_minus = np.minimum(rm, 0.0)

    if not (np.isfinite(up).all() and np.isfinite(um).all()
            and np.isfinite(vp).all() and np.isfinite(vm).all()
            and np.isfinite(ybar).all()):
        raise EngineDivergenceError(
            f"non-finite state at t={t}; beta(t)*(max_degree+1) = "
            f"{b * (max_degree + 1):.3f} is likely too large for this graph")

    return EngineState(
        t=t + 1,
        theta_plus=theta_plus, theta_minus=theta_minus,
        u_plus=up, u_minus=um, v_plus=vp, v_minus=vm,
        ybar=ybar,
        h_plus=hp.astype(np.int64), h_minus=hm.astype(np.int64),
        ratio_plus=rp, ratio_minus=rm,
    )


def iterate(state: EngineState, snapshot: FieldSnapshot, topo: NetworkTopology,
            schedule: StepSchedule, config: EngineConfig, t: int) -> EngineState:
    """One synchronous sweep at time t, returning the state at time t + 1."""
    if t < 1:
        raise ParameterError(f"t must be >= 1, got {t}")
    return _sweep(state, snapshot.y, snapshot.params.sigma, snapshot.params.p1,
                  config.delta, schedule.alpha(t), schedule.beta(t),
                  topo.laplacian(), topo.max_degree, t)


def _stopping_rule_met(prev: EngineState, cur: EngineState, eps: float) -> bool:
    return (float(np.abs(cur.ratio_plus - prev.ratio_plus).max()) < eps
            and float(np.abs(cur.ratio_minus - prev.ratio_minus).max()) < eps
            and float(np.abs(cur.ybar - prev.ybar).max()) < eps)


def run(snapshot: FieldSnapshot, topo: NetworkTopology,
        schedule: StepSchedule | None = None,
        config: EngineConfig | None = None) -> RunResult:
    """Iterate sweeps until the three per-node deltas drop below epsilon_stop
    at every node (evaluated globally) or max_iters is reached."""
    config = config or EngineConfig()
    schedule = schedule or default_schedule(topo)
    p1 = snapshot.params.p1
    state = initialize(snapshot, topo, p1, config.include_self_in_init)
    # proper u(0)/(v(0)+delta) seeds for the stopping rule
    state = replace(state,
                    ratio_plus=state.u_plus / (state.v_plus + config.delta),
                    ratio_minus=state.u_minus / (state.v_minus + config.delta))

    trace_rows: list[np.ndarray] | None = [] if config.record_trace else None
    if trace_rows is not None:
        trace_rows.append(_trace_block(state))

    y = snapshot.y
    sigma = snapshot.params.sigma
    lap = topo.laplacian()
    max_degree = topo.max_degree
    converged = False
    iterations = 0
    for t in range(1, config.max_iters + 1):
        new_state = _sweep(state, y, sigma, p1, config.delta,
                           schedule.alpha(t), schedule.beta(t), lap, max_degree, t)
        iterations = t
        if trace_rows is not None:
            trace_rows.append(_trace_block(new_state))
        # ratio deltas are defined from t = 1 on (u(0)/v(0) seeds), but the
        # ybar delta needs two post-initialization values, so test from t = 2.
        if t >= 2 and _stopping_rule_met(state, new_state, config.epsilon_stop):
            state = new_state
            converged = True
            break
        state = new_state

    estimates = state.selected_estimates()
    residual = math.nan
    if converged:
        residual = _fixed_point_residual(estimates, snapshot, config.delta)
    result = RunResult(
        final_estimates=estimates,
        iterations_used=iterations,
        converged=converged,
        final_h_plus=state.h_plus.copy(),
        final_h_minus=state.h_minus.copy(),
        final_ybar=state.ybar.copy(),
        fixed_point_residual=residual,
        trace=np.vstack(trace_rows) if trace_rows else None,
    )
    return result


def _trace_block(state: EngineState) -> np.ndarray:
    n = len(state.theta_plus)
    block = np.empty((n, len(TRACE_COLUMNS)))
    block[:, 0] = state.t
    block[:, 1] = np.arange(n)
    block[:, 2] = state.theta_plus
    block[:, 3] = state.theta_minus
    block[:, 4] = state.u_plus
    block[:, 5] = state.v_plus
    block[:, 6] = state.u_minus
    block[:, 7] = state.v_minus
    block[:, 8] = state.ybar
    block[:, 9] = state.h_plus
    block[:, 10] = state.h_minus
    return block


def _fixed_point_residual(estimates: np.ndarray, snapshot: FieldSnapshot,
                          delta: float) -> float:
    y = snapshot.y
    params = snapshot.params
    n = params.n
    theta_inf = float(np.median(estimates))
    h = np.asarray(detect(theta_inf, y, params.sigma, params.p1), dtype=np.float64)
    value = float(h @ y) / (float(h.sum()) + n * delta)
    if snapshot.ybar >= 0.0:
        limit = max(value, 0.0)
    else:
        limit = min(value, 0.0)
    return abs(theta_inf - limit)


def check_fixed_point(result: RunResult, snapshot: FieldSnapshot,
                      config: EngineConfig, p1: float) -> float:
    """Self-consistency residual of the consensus value.

    Takes the median of the final estimates, re-runs the detection rule at
    that value, and measures the gap to the detect-then-average limit on the
    branch selected by the sign of the observation mean (sign(0) counts as
    positive).  It does not presume which fixed point the run reached.
    """
    if not result.converged:
        raise NotConvergedError("check_fixed_point needs a converged run")
    if abs(p1 - snapshot.params.p1) > 1e-15:
        raise ParameterError("p1 disagrees with the snapshot parameters")
    return _fixed_point_residual(result.final_estimates, snapshot, config.delta)


def detection_ordering_holds(result: RunResult, snapshot: FieldSnapshot) -> bool:
    """Sorted observations must give nondecreasing plus-branch detections and
    nonincreasing minus-branch detections."""
    order = np.argsort(snapshot.y, kind="stable")
    hp = result.final_h_plus[order]
    hm = result.final_h_minus[order]
    return bool(np.all(np.diff(hp) >= 0) and np.all(np.diff(hm) <= 0))
