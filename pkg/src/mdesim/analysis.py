"""Performance theory for the detect-then-average limit.

Covers: per-observation decision regions of the MAP validity rule and their
nesting, the two-component Gaussian mixture of an observation, moments and
marginal distributions of its order statistics, Monte Carlo estimates of the
probabilities of the ordered limiting detection patterns, the closed-form
variance decomposition built from those pieces, the central-order-statistic
normal approximation, and the large-network limit of the trimmed-average
estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate, optimize, stats
from scipy.special import ndtr

from .model import ParameterError, rng_stream


# ---------------------------------------------------------------------------
# decision regions
# ---------------------------------------------------------------------------

class RegionKind(Enum):
    EMPTY = "Empty"
    INTERVAL = "Interval"


@dataclass(frozen=True)
class DecisionRegion:
    """Interval of estimate values for which the MAP rule declares a given
    observation valid: [y - sqrt(y^2 + c), y + sqrt(y^2 + c)] with
    c = 2 sigma^2 ln(p1/p0), empty when the discriminant is negative."""

    kind: RegionKind
    lower: float = math.nan
    upper: float = math.nan


def _log_prior_term(sigma: float, p1: float) -> float:
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    if not (0.0 < p1 < 1.0):
        raise ParameterError(f"p1 must lie in (0, 1), got {p1}")
    return 2.0 * sigma * sigma * math.log(p1 / (1.0 - p1))


def decision_region(y_i: float, sigma: float, p1: float) -> DecisionRegion:
    c = _log_prior_term(sigma, p1)
    disc = y_i * y_i + c
    if disc < 0.0:
        return DecisionRegion(kind=RegionKind.EMPTY)
    root = math.sqrt(disc)
    return DecisionRegion(kind=RegionKind.INTERVAL, lower=y_i - root, upper=y_i + root)


def region_contains(region: DecisionRegion, theta_hat: float) -> bool:
    if region.kind is RegionKind.EMPTY:
        return False
    return region.lower <= theta_hat <= region.upper


def regions_nested(y_sorted: np.ndarray, sigma: float, p1: float) -> bool:
    """Containment chain of the plus-branch regions for ascending observations.

    Regions are truncated to the feasible half-line [0, inf) of the positive
    branch; on p1 < 0.5 the entirely-negative regions are infeasible and
    count as empty.  Empty regions are subsets of everything but must not
    reappear after a non-empty one.
    """
    y_sorted = np.asarray(y_sorted, dtype=np.float64)
    if np.any(np.diff(y_sorted) < 0):
        raise ParameterError("observations must be sorted ascending")
    prev: tuple[float, float] | None = None
    for y in y_sorted:
        region = decision_region(float(y), sigma, p1)
        if region.kind is RegionKind.EMPTY or region.upper < 0.0:
            feasible = None
        else:
            feasible = (max(region.lower, 0.0), region.upper)
        if feasible is None:
            if prev is not None:
                return False
            continue
        if prev is not None:
            if feasible[0] > prev[0] or feasible[1] < prev[1]:
                return False
        prev = feasible
    return True


# ---------------------------------------------------------------------------
# observation mixture
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureDistribution:
    """Marginal law of one observation: N(0, sigma^2) with weight 1 - p1 and
    N(theta, sigma^2) with weight p1."""

    theta: float
    sigma: float
    p1: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if not (0.0 < self.p1 < 1.0):
            raise ParameterError(f"p1 must lie in (0, 1), got {self.p1}")

    @property
    def mean(self) -> float:
        return self.p1 * self.theta

    @property
    def variance(self) -> float:
        return self.p1 * (1.0 - self.p1) * self.theta ** 2 + self.sigma ** 2

    def cdf(self, y):
        y = np.asarray(y, dtype=np.float64)
        out = (ndtr(y / self.sigma) * (1.0 - self.p1)
               + ndtr((y - self.theta) / self.sigma) * self.p1)
        return out if out.ndim else float(out)

    def pdf(self, y):
        y = np.asarray(y, dtype=np.float64)
        z0 = y / self.sigma
        z1 = (y - self.theta) / self.sigma
        norm = 1.0 / (self.sigma * math.sqrt(2.0 * math.pi))
        out = norm * ((1.0 - self.p1) * np.exp(-0.5 * z0 * z0)
                      + self.p1 * np.exp(-0.5 * z1 * z1))
        return out if out.ndim else float(out)

    def quantile(self, q: float) -> float:
        """Invert the cdf by bracketed root finding to ~1e-12 absolute."""
        if not (0.0 < q < 1.0):
            raise ParameterError(f"q must lie in (0, 1), got {q}")
        lo = min(0.0, self.theta) - 10.0 * self.sigma
        hi = max(0.0, self.theta) + 10.0 * self.sigma
        while self.cdf(lo) > q:
            lo -= 10.0 * self.sigma
        while self.cdf(hi) < q:
            hi += 10.0 * self.sigma
        return float(optimize.brentq(lambda v: self.cdf(v) - q, lo, hi,
                                     xtol=1e-13, rtol=4 * np.finfo(float).eps))

    def sample(self, count: int, gen: np.random.Generator) -> np.ndarray:
        valid = gen.random(count) < self.p1
        return gen.standard_normal(count) * self.sigma + self.theta * valid


# ---------------------------------------------------------------------------
# order statistics
# ---------------------------------------------------------------------------

class MomentMethod(Enum):
    QUADRATURE = "Quadrature"
    MONTE_CARLO = "MonteCarlo"


@dataclass(frozen=True)
class OrderStatSummary:
    n: int
    i: int
    mean: float
    variance: float
    method: MomentMethod
    abs_error: float = 0.0


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


def order_stat_cdf(dist: MixtureDistribution, n: int, i: int, r: float) -> float:
    """P(Y_(i) <= r) = P(Binomial(n, F(r)) >= i), evaluated stably."""
    if not (1 <= i <= n):
        raise ParameterError(f"need 1 <= i <= n, got i={i}, n={n}")
    return float(stats.binom.sf(i - 1, n, dist.cdf(r)))


_U_CLIP = 1e-12
_QUAD_TOL = 1e-6


def order_stat_moments(dist: MixtureDistribution, n: int, i: int,
                       method: MomentMethod = MomentMethod.QUADRATURE,
                       samples: int = 10 ** 5, seed: int = 0) -> OrderStatSummary:
    """Mean and variance of the i-th of n i.i.d. mixture draws.

    Quadrature path: the quantile-transformed integral
    mu_(i) = n C(n-1, i-1) int_0^1 F^-1(u) u^(i-1) (1-u)^(n-i) du, whose
    weight is exactly the Beta(i, n-i+1) density; the u-range is clipped to
    [1e-12, 1 - 1e-12] against the endpoint singularities of F^-1.
    """
    if not (1 <= i <= n):
        raise ParameterError(f"need 1 <= i <= n, got i={i}, n={n}")
    if n > 10 ** 4:
        raise ParameterError(f"n capped at 1e4 for moment evaluation, got {n}")
    if method is MomentMethod.MONTE_CARLO:
        gen = rng_stream(seed, 17)
        draws = np.sort(dist.sample(samples * n, gen).reshape(samples, n), axis=1)[:, i - 1]
        return OrderStatSummary(n=n, i=i, mean=float(draws.mean()),
                                variance=float(draws.var()),
                                method=method,
                                abs_error=float(draws.std() / math.sqrt(samples)))
    weight = stats.beta(i, n - i + 1)
    hint = [float(weight.ppf(p)) for p in (0.005, 0.05, 0.25, 0.5, 0.75, 0.95, 0.995)]

    def moment(power: int) -> tuple[float, float]:
        def f(u: float) -> float:
            return dist.quantile(u) ** power * weight.pdf(u)

        value, err = integrate.quad(f, _U_CLIP, 1.0 - _U_CLIP, points=hint,
                                    limit=200, epsabs=1e-9, epsrel=1e-11)
        return value, err

    m1, e1 = moment(1)
    m2, e2 = moment(2)
    err = max(e1, e2)
    if err > _QUAD_TOL:
        raise QuadratureError(f"estimated error {err:.2e} above {_QUAD_TOL:.0e} "
                              f"for (n={n}, i={i})")
    return OrderStatSummary(n=n, i=i, mean=m1, variance=m2 - m1 * m1,
                            method=method, abs_error=err)


# ---------------------------------------------------------------------------
# probabilities of the ordered limiting detection patterns
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EventProbabilities:
    """Monte Carlo frequencies of the n ordered patterns on one branch.

    probs[k-1] estimates P(limit pattern has exactly k-1 zeros) on the plus
    branch (mirrored for the minus branch); residual_mass is the frequency of
    samples matching no pattern, overlap_mass the frequency of samples whose
    literal event conjunctions fired more than once.
    """

    branch: str
    probs: np.ndarray
    std_err: np.ndarray
    residual_mass: float
    overlap_mass: float
    samples: int


def _pattern_events_plus(sigma: float, p1: float,
                         sorted_y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Boolean event matrix (samples, n) for the plus-branch patterns.

    Column k-1 follows the literal event conjunctions for the pattern with
    k-1 zeros: the average of the top n-k+1 observations sits inside the k-th
    region boundary and outside the (k-1)-th, with a nonnegative sample sum.
    On p1 < 0.5 the four lower-boundary conjunctions are evaluated literally;
    undefined square roots make a condition false.  Second return value flags
    samples where more than one conjunction fired for the same k.
    """
    m, n = sorted_y.shape
    c = _log_prior_term(sigma, p1)
    pos = sorted_y.sum(axis=1) >= 0.0
    with np.errstate(invalid="ignore"):
        disc = np.sqrt(sorted_y * sorted_y + c)
        r_plus = sorted_y + disc
        r_minus = sorted_y - disc
        suffix_mean = (np.cumsum(sorted_y[:, ::-1], axis=1)[:, ::-1]
                       / (n - np.arange(n, dtype=np.float64)))
        prev_y = np.concatenate([np.full((m, 1), -math.inf), sorted_y[:, :-1]], axis=1)
        prev_r_plus = np.concatenate([np.full((m, 1), -math.inf), r_plus[:, :-1]], axis=1)
        prev_r_minus = np.concatenate([np.full((m, 1), math.inf), r_minus[:, :-1]], axis=1)

        if c >= 0.0:
            events = ((prev_r_plus <= suffix_mean) & (suffix_mean <= r_plus)
                      & pos[:, None])
            return events, np.zeros(m, dtype=bool)

        gate = math.sqrt(-c)
        e1 = ((prev_r_plus <= suffix_mean) & (suffix_mean <= r_plus)
              & (prev_y >= -gate))
        e2 = ((suffix_mean <= r_plus) & (sorted_y >= -gate) & (prev_y < -gate))
        e3 = ((prev_r_minus >= suffix_mean) & (suffix_mean >= r_minus)
              & (prev_y >= -gate))
        e4 = ((suffix_mean >= r_minus) & (sorted_y >= -gate) & (prev_y < -gate))
    fired = (e1.astype(np.int8) + e2.astype(np.int8)
             + e3.astype(np.int8) + e4.astype(np.int8))
    events = (fired > 0) & pos[:, None]
    return events, (fired > 1).any(axis=1) & pos


def event_probabilities(dist: MixtureDistribution, n: int, branch: str,
                        samples: int, seed: int) -> EventProbabilities:
    """Empirical frequencies of the n ordered limit patterns on one branch.

    Minus-branch events on y coincide with plus-branch events on -y (the
    detection rule, boundaries, and branch clamp all mirror), so one kernel
    serves both branches.
    """
    if branch not in ("plus", "minus"):
        raise ParameterError(f"branch must be 'plus' or 'minus', got {branch!r}")
    if samples < 10 ** 4:
        raise ParameterError(f"need at least 1e4 samples, got {samples}")
    gen = rng_stream(seed, 23)
    counts = np.zeros(n, dtype=np.int64)
    matched = 0
    multi = 0
    conj_overlap = 0
    chunk = max(1, min(samples, 2 * 10 ** 5 // max(n, 1)))
    remaining = samples
    while remaining > 0:
        take = min(chunk, remaining)
        remaining -= take
        block = dist.sample(take * n, gen).reshape(take, n)
        if branch == "minus":
            block = -block
        block.sort(axis=1)
        events, overlapped = _pattern_events_plus(dist.sigma, dist.p1, block)
        counts += events.sum(axis=0)
        per_sample = events.sum(axis=1)
        matched += int((per_sample >= 1).sum())
        multi += int((per_sample > 1).sum())
        conj_overlap += int(overlapped.sum())
    probs = counts / samples
    std_err = np.sqrt(np.maximum(probs * (1.0 - probs), 0.0) / samples)
    return EventProbabilities(branch=branch, probs=probs, std_err=std_err,
                              residual_mass=1.0 - matched / samples,
                              overlap_mass=(multi + conj_overlap) / samples,
                              samples=samples)


# ---------------------------------------------------------------------------
# variance decomposition
# ---------------------------------------------------------------------------

def variance_decomposition(dist: MixtureDistribution, n: int,
                           probs_plus: EventProbabilities,
                           probs_minus: EventProbabilities,
                           moments: list[OrderStatSummary]) -> float:
    """Var(estimate) assembled from pattern probabilities and order-statistic
    moments, treating the order statistics inside each pattern average as
    uncorrelated.

    The k-th plus pattern averages the top n-k+1 order statistics, the k-th
    minus pattern the bottom n-k+1.  With positively correlated order
    statistics and unconditional marginal moments this closed form can sit
    far above a direct simulation at high SNR; both are reported by the
    toolkit rather than reconciled.
    """
    if len(moments) != n:
        raise ParameterError(f"need moments for i = 1..{n}")
    mus = np.array([m.mean for m in sorted(moments, key=lambda m: m.i)])
    var_ = np.array([m.variance for m in sorted(moments, key=lambda m: m.i)])
    e_var = 0.0
    mean_first = 0.0
    mean_second = 0.0
    for k in range(1, n + 1):
        m = n - k + 1
        var_plus = float(var_[k - 1:].sum()) / m ** 2
        var_minus = float(var_[:m].sum()) / m ** 2
        mean_plus = float(mus[k - 1:].sum()) / m
        mean_minus = float(mus[:m].sum()) / m
        pp = float(probs_plus.probs[k - 1])
        pm = float(probs_minus.probs[k - 1])
        e_var += var_plus * pp + var_minus * pm
        mean_first += mean_plus * pp + mean_minus * pm
        mean_second += mean_plus ** 2 * pp + mean_minus ** 2 * pm
    var_of_mean = mean_second - mean_first ** 2
    return e_var + var_of_mean


# ---------------------------------------------------------------------------
# asymptotics
# ---------------------------------------------------------------------------

def central_orderstat_normal_approx(dist: MixtureDistribution, n: int,
                                    q: float) -> tuple[float, float]:
    """Normal parameters (F^-1(q), q(1-q) / (n f(F^-1(q))^2)) of the
    ceil(n*q)-th order statistic for large n."""
    if not (0.0 < q < 1.0):
        raise ParameterError(f"q must lie in (0, 1), got {q}")
    xq = dist.quantile(q)
    density = dist.pdf(xq)
    if density <= 1e-300:
        raise ParameterError(f"density vanishes at the q={q} quantile")
    return xq, q * (1.0 - q) / (n * density * density)


def _gaussian_upper_partial(m: float, sigma: float, a: float) -> tuple[float, float]:
    """(integral of y phi, integral of phi) over [a, inf) for N(m, sigma^2)."""
    z = (a - m) / sigma
    tail = float(ndtr(-z))
    dens = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return m * tail + sigma * dens, tail


def asymptotic_trimmed_mean(dist: MixtureDistribution, q: float,
                            branch: str = "plus") -> float:
    """Large-n limit of the pattern average: the mixture mean conditioned on
    the observation lying above (plus) or below (minus) the q-quantile,
    via closed-form Gaussian partial moments per component."""
    if branch not in ("plus", "minus"):
        raise ParameterError(f"branch must be 'plus' or 'minus', got {branch!r}")
    a = dist.quantile(q)
    num = 0.0
    den = 0.0
    for mean_c, weight in ((0.0, 1.0 - dist.p1), (dist.theta, dist.p1)):
        up_num, up_den = _gaussian_upper_partial(mean_c, dist.sigma, a)
        if branch == "plus":
            num += weight * up_num
            den += weight * up_den
        else:
            num += weight * (mean_c - up_num)
            den += weight * (1.0 - up_den)
    return num / den


def sample_trimmed_estimate(dist: MixtureDistribution, n: int, q: float,
                            branch: str, gen: np.random.Generator) -> float:
    """One draw of the finite-n pattern average: sort n mixture samples and
    average the top (plus) or bottom (minus) n - ceil(n*q) + 1 of them."""
    if branch not in ("plus", "minus"):
        raise ParameterError(f"branch must be 'plus' or 'minus', got {branch!r}")
    k = math.ceil(n * q)
    if not (1 <= k <= n):
        raise ParameterError(f"ceil(n*q) = {k} out of range for n = {n}")
    draws = np.sort(dist.sample(n, gen))
    return float(draws[k - 1:].mean()) if branch == "plus" else float(draws[:n - k + 1].mean())
