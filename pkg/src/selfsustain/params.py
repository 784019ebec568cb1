"""Swarm model parameters, derived loads and Poisson helpers.

Rates are per second throughout: arrivals in peers/s, block downloads in
blocks/s and seed departures in 1/s.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import special, stats

from .errors import ValidationError

INFINITE = math.inf
#: Sentinel for ``gamma``: seeds linger with the same rate as block downloads.
EQUAL_MU = "mu"

DEFAULT_ETA = 1e-9
DEFAULT_BLOCK_BYTES = 262144

# Above this mean the truncation search is seeded from the normal approximation.
_NORMAL_SEED_MEAN = 1000.0


class GammaMode(enum.Enum):
    INFINITE = "inf"
    EQUAL_MU = "mu"
    FINITE = "finite"


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the two-layer swarm model.

    ``mu`` is either one block-download rate shared by every block or a
    sequence with the rate of the 1st, 2nd, ..., B-th block downloaded.
    ``gamma`` is the seed departure rate: :data:`INFINITE` (seeds leave at
    once), :data:`EQUAL_MU`, or any positive finite rate.
    """

    n_blocks: int
    arrival_rate: float
    mu: Union[float, Sequence[float]]
    gamma: Union[float, str] = INFINITE
    block_bytes: int = DEFAULT_BLOCK_BYTES

    def __post_init__(self):
        if isinstance(self.mu, (list, tuple, np.ndarray)):
            object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
        if isinstance(self.gamma, str):
            g = self.gamma.strip().lower()
            if g in ("inf", "infinite", "infinity"):
                object.__setattr__(self, "gamma", INFINITE)
            elif g == EQUAL_MU:
                object.__setattr__(self, "gamma", EQUAL_MU)
            else:
                raise ValidationError(f"gamma must be a rate, 'inf' or 'mu', got {self.gamma!r}")

    @property
    def is_heterogeneous(self) -> bool:
        return isinstance(self.mu, tuple) and len(set(self.mu)) > 1

    @property
    def rates(self) -> np.ndarray:
        """Per-block download rates mu_1..mu_B as an array."""
        if isinstance(self.mu, tuple):
            return np.asarray(self.mu, dtype=float)
        return np.full(self.n_blocks, float(self.mu))

    @property
    def scalar_mu(self) -> float:
        if isinstance(self.mu, tuple):
            if self.is_heterogeneous:
                raise ValidationError("block download rates differ; no single mu exists")
            return self.mu[0]
        return float(self.mu)

    @property
    def gamma_mode(self) -> GammaMode:
        if self.gamma == EQUAL_MU:
            return GammaMode.EQUAL_MU
        if math.isinf(self.gamma):
            return GammaMode.INFINITE
        if not self.is_heterogeneous and self.gamma == self.scalar_mu:
            return GammaMode.EQUAL_MU
        return GammaMode.FINITE

    @property
    def gamma_rate(self) -> float:
        """Numeric seed departure rate (``inf`` when seeds leave at once)."""
        if self.gamma == EQUAL_MU:
            return self.scalar_mu
        return float(self.gamma)

    def stage_means(self) -> np.ndarray:
        """Mean occupancy of stages 0..B-1 (stage h downloads block h+1)."""
        return self.arrival_rate / self.rates


@dataclass(frozen=True)
class LoadProfile:
    rho: float
    sigma: np.ndarray
    total_mean: float


def validate(params: ModelParams) -> LoadProfile:
    """Check ``params`` and return the per-stage load and stage probabilities.

    ``sigma[h]`` is the probability that a randomly chosen leecher sits in
    stage ``h``; it is proportional to the mean time spent there.
    """
    B = params.n_blocks
    if isinstance(B, bool) or not isinstance(B, (int, np.integer)) or B < 1:
        raise ValidationError(f"block count must be a positive integer, got {B!r}")
    lam = params.arrival_rate
    if not np.isfinite(lam) or lam < 0:
        raise ValidationError(f"arrival rate must be finite and >= 0, got {lam!r}")
    if isinstance(params.mu, tuple) and len(params.mu) != B:
        raise ValidationError(f"expected {B} block rates, got {len(params.mu)}")
    rates = params.rates
    if not np.all(np.isfinite(rates)) or np.any(rates <= 0):
        raise ValidationError("every block download rate must be finite and > 0")
    if params.gamma != EQUAL_MU:
        g = float(params.gamma)
        if math.isnan(g) or g <= 0:
            raise ValidationError(f"gamma must be > 0 or infinite, got {params.gamma!r}")
    if params.block_bytes <= 0:
        raise ValidationError("block_bytes must be positive")

    inv = 1.0 / rates
    sigma = inv / inv.sum()
    leecher_mean = lam * inv.sum()
    rho = leecher_mean / B
    mode = params.gamma_mode
    if mode is GammaMode.INFINITE:
        total = leecher_mean
    else:
        total = leecher_mean + lam / params.gamma_rate
    return LoadProfile(rho=float(rho), sigma=sigma, total_mean=float(total))


def poisson_pmf(mean, n):
    """Poisson probability mass at ``n``, evaluated in log space.

    Accepts scalars or arrays for ``n``; stays finite for large ``n`` where
    ``mean**n / n!`` would overflow.
    """
    n_arr = np.asarray(n)
    logp = special.xlogy(n_arr, mean) - mean - special.gammaln(n_arr + 1.0)
    out = np.exp(logp)
    if np.ndim(out) == 0:
        return float(out)
    return out


def poisson_tail(mean: float, n: int) -> float:
    """P(X > n) for X ~ Poisson(mean)."""
    if n < 0:
        return 1.0
    return float(stats.poisson.sf(n, mean))


def choose_truncation(total_mean: float, eta: float = DEFAULT_ETA) -> int:
    """Smallest population ``N`` whose Poisson tail beyond ``N`` is <= ``eta``."""
    if eta >= 1.0 or total_mean <= 0.0:
        return 0
    if eta <= 0.0:
        raise ValidationError("eta must be positive")

    def ok(n):
        return poisson_tail(total_mean, n) <= eta

    if total_mean > _NORMAL_SEED_MEAN:
        z = stats.norm.isf(eta)
        guess = int(math.ceil(total_mean + z * math.sqrt(total_mean)))
    else:
        guess = int(math.ceil(total_mean))
    lo, hi = -1, max(guess, 0)
    step = max(1, int(math.sqrt(total_mean)))
    while not ok(hi):
        lo = hi
        hi += step
        step *= 2
    if total_mean > _NORMAL_SEED_MEAN:
        step = max(1, int(math.sqrt(total_mean)))
        lo = hi - step
        while lo >= 0 and ok(lo):
            hi = lo
            lo -= step
            step *= 2
        lo = max(lo, -1)
    # invariant: not ok(lo) (or lo == -1), ok(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def make_rng(seed) -> np.random.Generator:
    """Generator for an int, a sequence of ints or a ready SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.default_rng(ss)


def substream(seed, *keys: int) -> np.random.SeedSequence:
    """Deterministic child of ``seed`` addressed by ``keys``; unlike
    ``SeedSequence.spawn`` it leaves the parent untouched."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + keys)
    return np.random.SeedSequence(seed, spawn_key=keys)
