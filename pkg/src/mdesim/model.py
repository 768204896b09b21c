"""Observation model: a scalar target seen through randomly defective sensors.

Each sensor i reports y_i = h_i * theta + w_i, where h_i is a Bernoulli(p1)
validity index (1 = signal plus noise, 0 = pure noise) and w_i is zero-mean
Gaussian noise with standard deviation sigma.

Randomness policy: all draws come from the counter-based Philox 4x64 bit
generator keyed by (master_seed, stream), so replicas get independent,
scheduling-independent streams.  Gaussian variates are produced by inverse-CDF
transform of 53-bit uniforms, which keeps snapshots bit-stable across
platforms and numpy versions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri


class ParameterError(ValueError):
    """A model or configuration parameter is outside its legal domain."""


def rng_stream(master_seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for (master_seed, stream), Philox keyed."""
    key = np.array([master_seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def standard_normal(gen: np.random.Generator, size: int) -> np.ndarray:
    """N(0,1) draws via inverse CDF of strictly interior 53-bit uniforms."""
    u = (gen.integers(0, 1 << 53, size=size).astype(np.float64) + 0.5) * 2.0 ** -53
    return ndtri(u)


@dataclass(frozen=True)
class ModelParams:
    """Target, noise and defect-prior parameters for one field.

    Derived quantities (p0, sigma_h2, snr) are recomputed on access so they
    can never go stale.
    """

    theta: float
    sigma: float
    p1: float
    n: int

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if not (0.0 < self.p1 < 1.0):
            raise ParameterError(f"p1 must lie in (0, 1), got {self.p1}")
        if self.n < 1:
            raise ParameterError(f"n must be >= 1, got {self.n}")

    @property
    def p0(self) -> float:
        return 1.0 - self.p1

    @property
    def sigma_h2(self) -> float:
        return self.p1 * (1.0 - self.p1)

    @property
    def snr(self) -> float:
        return self.theta ** 2 / self.sigma ** 2

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.snr) if self.theta != 0 else -math.inf


@dataclass(frozen=True)
class FieldSnapshot:
    """One realization (h, w, y) of the field; immutable and shareable."""

    h: np.ndarray
    w: np.ndarray
    y: np.ndarray
    params: ModelParams
    seed: int = field(default=0)

    @property
    def ybar(self) -> float:
        """Arithmetic mean of the observations."""
        return float(self.y.mean())

    @property
    def n(self) -> int:
        return self.params.n


def sample_snapshot(params: ModelParams, seed: int) -> FieldSnapshot:
    """Draw h ~ Bernoulli(p1) i.i.d. and w ~ N(0, sigma^2) i.i.d.

    Pure function of (params, seed): identical inputs give identical bits.
    """
    gen = rng_stream(seed, 0)
    h = (gen.random(params.n) < params.p1).astype(np.float64)
    w = params.sigma * standard_normal(gen, params.n)
    y = h * params.theta + w
    h.flags.writeable = False
    w.flags.writeable = False
    y.flags.writeable = False
    return FieldSnapshot(h=h, w=w, y=y, params=params, seed=seed)


def conditional_snapshot(params: ModelParams, k: int, seed: int) -> FieldSnapshot:
    """Snapshot with exactly k invalid sensors at uniformly random positions."""
    if not (0 <= k <= params.n):
        raise ParameterError(f"k must lie in [0, {params.n}], got {k}")
    gen = rng_stream(seed, 1)
    h = np.ones(params.n)
    invalid = gen.permutation(params.n)[:k]
    h[invalid] = 0.0
    w = params.sigma * standard_normal(gen, params.n)
    y = h * params.theta + w
    h.flags.writeable = False
    w.flags.writeable = False
    y.flags.writeable = False
    return FieldSnapshot(h=h, w=w, y=y, params=params, seed=seed)
