"""Ground-truth engines for tiny instances and for the uniform-signature model.

* :func:`exact_all_available` and :func:`enumerate_cond_dist` count signature
  assignments exactly for a fixed stage vector.
* :func:`mc_avail_dist` samples the model directly: Poisson stage occupancies,
  uniform signatures.
* :func:`ctmc_simulate` runs the joint user/signature Markov chain in which
  each peer fetches a uniformly chosen missing block.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .errors import CapabilityError, ValidationError
from .params import GammaMode, ModelParams, make_rng, validate

MAX_EXACT_BLOCKS = 30
MAX_ENUMERATION = 10**7

Z99 = float(stats.norm.isf(0.005))


# --------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class StageVector:
    """Per-stage peer counts ``n[0..B]``; ``n[h]`` peers hold ``h`` blocks."""

    n: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.n)
        if any(c < 0 for c in counts):
            raise ValidationError("stage counts must be nonnegative")
        object.__setattr__(self, "n", counts)

    @classmethod
    def of(cls, B: int, counts: Union["StageVector", Sequence[int], dict]) -> "StageVector":
        """Normalize ``counts`` to length ``B + 1``; a dict maps stage to count."""
        if isinstance(counts, StageVector):
            counts = counts.n
        if isinstance(counts, dict):
            full = [0] * (B + 1)
            for h, c in counts.items():
                if not 0 <= h <= B:
                    raise ValidationError(f"stage {h} outside [0, {B}]")
                full[h] = c
            return cls(tuple(full))
        counts = list(counts)
        if len(counts) > B + 1:
            raise ValidationError(f"at most {B + 1} stage counts expected, got {len(counts)}")
        return cls(tuple(counts) + (0,) * (B + 1 - len(counts)))

    @property
    def total(self) -> int:
        return sum(self.n)


@dataclass(frozen=True)
class Signature:
    """Ownership bitset of one peer; bit ``b`` set means block ``b`` is held."""

    bits: int
    stage: int

    def __post_init__(self):
        if bin(self.bits).count("1") != self.stage:
            raise ValidationError("stage must equal the number of set bits")


@dataclass
class CtmcState:
    """Peers grouped by stage (``users[h]`` holds bitmasks) and the clock."""

    users: List[List[int]]
    clock: float = 0.0


# --------------------------------------------------------------------------
# exact counting


def exact_all_available(B: int, stage, *, as_fraction: bool = False):
    """P(all blocks held | stage vector) by inclusion/exclusion over the set
    of blocks nobody holds, in exact integer arithmetic."""
    if B < 1:
        raise ValidationError("B must be >= 1")
    if B > MAX_EXACT_BLOCKS:
        raise CapabilityError(f"exact counting supports B <= {MAX_EXACT_BLOCKS}, got {B}")
    n = StageVector.of(B, stage).n
    if n[B] > 0:
        result = Fraction(1)
    else:
        # i = B is kept: its product is 1 only when nobody holds any block
        num = sum(
            (-1) ** i
            * math.comb(B, i)
            * math.prod(math.comb(B - i, j) ** n[j] for j in range(1, B))
            for i in range(B + 1)
        )
        den = math.prod(math.comb(B, j) ** n[j] for j in range(1, B))
        result = Fraction(num, den)
    return result if as_fraction else float(result)


def state_space_size(B: int, stage) -> int:
    n = StageVector.of(B, stage).n
    return math.prod(math.comb(B, h) ** n[h] for h in range(B + 1))


def enumerate_cond_dist(B: int, stage, *, as_fraction: bool = False):
    """Exact P(V = v | stage vector) by exhausting every signature assignment.

    Assignments are folded peer by peer into counts per union bitmask, which
    visits each assignment's contribution once without storing them all.
    """
    if B < 1:
        raise ValidationError("B must be >= 1")
    n = StageVector.of(B, stage).n
    size = state_space_size(B, n)
    if size > MAX_ENUMERATION:
        raise CapabilityError(f"{size} signature assignments exceed the limit {MAX_ENUMERATION}")
    subsets = {
        h: [sum(1 << b for b in combo) for combo in itertools.combinations(range(B), h)]
        for h in range(B + 1)
        if n[h]
    }
    counts = {0: 1}
    for h in range(B + 1):
        for _ in range(n[h]):
            nxt: dict = {}
            for mask, c in counts.items():
                for s in subsets[h]:
                    u = mask | s
                    nxt[u] = nxt.get(u, 0) + c
            counts = nxt
    by_v = [0] * (B + 1)
    for mask, c in counts.items():
        by_v[bin(mask).count("1")] += c
    dist = [Fraction(c, size) for c in by_v]
    if as_fraction:
        return dist
    return np.array([float(x) for x in dist])


# --------------------------------------------------------------------------
# Monte Carlo over the model's own assumptions


@dataclass(frozen=True)
class MCEstimate:
    B: int
    samples: int
    p: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    confidence: float = 0.99

    @property
    def A(self) -> float:
        return float(self.p[self.B])

    @property
    def A_interval(self):
        return float(self.lower[self.B]), float(self.upper[self.B])


def _occupancy_means(params: ModelParams) -> np.ndarray:
    """Mean peer count per stage 0..B (stage B holds lingering seeds)."""
    validate(params)
    mode = params.gamma_mode
    if mode is GammaMode.FINITE:
        raise ValidationError("sampling supports gamma = inf or gamma = mu only")
    means = np.zeros(params.n_blocks + 1)
    means[:-1] = params.stage_means()
    if mode is GammaMode.EQUAL_MU:
        means[-1] = params.arrival_rate / params.gamma_rate
    return means


_MC_CELLS = 1 << 22


def mc_avail_dist(params: ModelParams, samples: int, seed) -> MCEstimate:
    """Empirical availability distribution with normal-approximation 99% CIs."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    B = params.n_blocks
    means = _occupancy_means(params)
    rng = make_rng(seed)
    hist = np.zeros(B + 1, dtype=np.int64)
    batch = max(1, min(samples, int(_MC_CELLS / (B * max(1.0, float(means.sum()))))))
    done = 0
    while done < samples:
        S = min(batch, samples - done)
        covered = np.zeros((S, B), dtype=bool)
        for h in range(1, B + 1):
            if means[h] == 0.0:
                continue
            k = rng.poisson(means[h], size=S)
            total = int(k.sum())
            if total == 0:
                continue
            owner = np.repeat(np.arange(S), k)
            if h == B:
                covered[owner] = True
                continue
            # partial Fisher-Yates: the first h slots become a uniform h-subset
            perm = np.tile(np.arange(B), (total, 1))
            rows = np.arange(total)
            for i in range(h):
                j = i + (rng.random(total) * (B - i)).astype(np.int64)
                a = perm[rows, i].copy()
                perm[rows, i] = perm[rows, j]
                perm[rows, j] = a
            covered[owner[:, None], perm[:, :h]] = True
        hist += np.bincount(covered.sum(axis=1), minlength=B + 1)
        done += S
    p = hist / samples
    half = Z99 * np.sqrt(p * (1.0 - p) / samples)
    return MCEstimate(
        B=B,
        samples=samples,
        p=p,
        lower=np.clip(p - half, 0.0, 1.0),
        upper=np.clip(p + half, 0.0, 1.0),
    )


# --------------------------------------------------------------------------
# integrated user/signature CTMC


@dataclass(frozen=True)
class CtmcMetrics:
    """Time averages over the post-warm-up window of one CTMC run."""

    B: int
    horizon: float
    warmup: float
    self_sustainability: float
    stage_means: np.ndarray
    v_dist: np.ndarray
    snapshots: np.ndarray = field(repr=False)
    events: int = 0


_RNG_CHUNK = 1 << 16


def ctmc_simulate(
    params: ModelParams,
    horizon_seconds: float,
    seed,
    *,
    warmup_fraction: float = 0.2,
    snapshot_period: Optional[float] = None,
) -> CtmcMetrics:
    """Event-driven simulation of peers arriving at rate ``lambda`` and each
    completing a uniformly chosen missing block at rate ``mu_{h+1}``; a peer
    leaves as soon as it holds every block.

    ``snapshots`` holds the stage occupancies sampled every
    ``snapshot_period`` seconds after warm-up (none when the period is None).
    """
    validate(params)
    if params.gamma_mode is not GammaMode.INFINITE:
        raise ValidationError("the CTMC oracle models immediate departure (gamma = inf) only")
    if horizon_seconds <= 0:
        raise ValidationError("horizon must be positive")
    if not 0.0 <= warmup_fraction < 1.0:
        raise ValidationError("warmup_fraction must lie in [0, 1)")
    B = params.n_blocks
    lam = float(params.arrival_rate)
    rates = [float(r) for r in params.rates]
    full = (1 << B) - 1
    warmup = warmup_fraction * horizon_seconds
    rng = make_rng(seed)

    state = CtmcState(users=[[] for _ in range(B)])
    users = state.users
    replicas = [0] * B
    V = 0
    all_time = 0.0
    stage_time = [0.0] * B
    v_time = [0.0] * (B + 1)
    snaps: list = []
    next_snap = warmup if snapshot_period else math.inf
    events = 0

    exp_buf = rng.standard_exponential(_RNG_CHUNK)
    uni_buf = rng.random(2 * _RNG_CHUNK)
    ei = ui = 0

    while True:
        total_rate = lam
        for h in range(B):
            total_rate += len(users[h]) * rates[h]
        if total_rate == 0.0:
            dt = math.inf
        else:
            if ei == _RNG_CHUNK:
                exp_buf = rng.standard_exponential(_RNG_CHUNK)
                ei = 0
            dt = exp_buf[ei] / total_rate
            ei += 1
        t0 = state.clock
        t1 = min(t0 + dt, horizon_seconds)

        while next_snap <= t1:
            snaps.append([len(u) for u in users])
            next_snap += snapshot_period
        lo = max(t0, warmup)
        if t1 > lo:
            span = t1 - lo
            if V == B:
                all_time += span
            v_time[V] += span
            for h in range(B):
                if users[h]:
                    stage_time[h] += len(users[h]) * span
        if t0 + dt >= horizon_seconds:
            break
        state.clock = t1
        events += 1

        if ui + 2 > len(uni_buf):
            uni_buf = rng.random(2 * _RNG_CHUNK)
            ui = 0
        x = uni_buf[ui] * total_rate
        ui += 1
        if x < lam:
            users[0].append(0)
            continue
        x -= lam
        h = 0
        while True:
            w = len(users[h]) * rates[h]
            if x < w or h == B - 1:
                break
            x -= w
            h += 1
        group = users[h]
        idx = min(int(x / rates[h]), len(group) - 1)
        mask = group[idx]
        # uniform choice among the B - h missing blocks
        r = int(uni_buf[ui] * (B - h))
        ui += 1
        b = -1
        for bit in range(B):
            if not mask >> bit & 1:
                if r == 0:
                    b = bit
                    break
                r -= 1
        mask |= 1 << b
        group[idx] = group[-1]
        group.pop()
        if replicas[b] == 0:
            V += 1
        replicas[b] += 1
        if mask == full:
            for bit in range(B):
                replicas[bit] -= 1
                if replicas[bit] == 0:
                    V -= 1
        else:
            users[h + 1].append(mask)

    window = horizon_seconds - warmup
    return CtmcMetrics(
        B=B,
        horizon=horizon_seconds,
        warmup=warmup,
        self_sustainability=all_time / window,
        stage_means=np.array(stage_time) / window,
        v_dist=np.array(v_time) / window,
        snapshots=np.array(snaps, dtype=np.int64).reshape(-1, B),
        events=events,
    )


@dataclass(frozen=True)
class CtmcSummary:
    runs: tuple
    mean: float
    stderr: float


def ctmc_replicate(
    params: ModelParams, horizon_seconds: float, seed, replications: int, **kwargs
) -> CtmcSummary:
    """Independent runs on spawned substreams; the standard error is taken
    across replications."""
    if replications < 2:
        raise ValidationError("at least two replications are needed for a standard error")
    children = np.random.SeedSequence(seed).spawn(replications)
    runs = tuple(ctmc_simulate(params, horizon_seconds, c, **kwargs) for c in children)
    vals = np.array([r.self_sustainability for r in runs])
    return CtmcSummary(
        runs=runs,
        mean=float(vals.mean()),
        stderr=float(vals.std(ddof=1) / math.sqrt(replications)),
    )


def poisson_occupancy_pvalue(counts: np.ndarray, mean: float, min_expected: float = 5.0) -> float:
    """Chi-square goodness-of-fit p-value of ``counts`` against Poisson(mean).

    Adjacent cells are merged left to right until each expects at least
    ``min_expected`` observations; the last cell is open-ended.
    """
    counts = np.asarray(counts, dtype=np.int64).ravel()
    if counts.size == 0:
        raise ValidationError("no counts to test")
    kmax = int(max(counts.max(), stats.poisson.ppf(1 - 1e-12, mean))) + 1
    observed = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1).astype(float)
    expected = stats.poisson.pmf(np.arange(kmax + 1), mean) * counts.size
    expected[kmax] += stats.poisson.sf(kmax, mean) * counts.size
    obs, exp = [], []
    o = e = 0.0
    for k in range(kmax + 1):
        o += observed[k]
        e += expected[k]
        if e >= min_expected:
            obs.append(o)
            exp.append(e)
            o = e = 0.0
    if exp:
        obs[-1] += o
        exp[-1] += e
    if len(obs) < 2:
        return 1.0
    return float(stats.chisquare(obs, exp).pvalue)
