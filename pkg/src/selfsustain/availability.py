"""Exact distribution of the number of blocks available among peers.

The conditional tables ``p_n(v)`` (``n`` peers present, ``v`` blocks held
collectively) are computed either by the O(N B^3) reference recursion that
adds one uniformly-staged peer at a time, or by the O(N B) recurrence that
collapses the sum over stages.  Mixing a table with the Poisson law of the
population gives the unconditional distribution ``p(v)``; its last entry is
the self-sustainability ``A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .errors import CapabilityError, NumericalCheckError, ValidationError
from .params import (
    DEFAULT_ETA,
    GammaMode,
    ModelParams,
    choose_truncation,
    poisson_pmf,
    poisson_tail,
    validate,
)

# Complement entries below this are treated as rounding noise and clamped.
_CLAMP_TOL = 1e-9
_ROW_TOL = 1e-10
# largest conditional table (rows x columns) built for one distribution
MAX_TABLE_CELLS = 50_000_000


def _log_binom(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


# --------------------------------------------------------------------------
# psi: one extra peer contributing h uniformly chosen blocks


def psi_direct(B: int, h: int, k: int, v: int) -> float:
    """Probability that ``k`` available blocks become ``v`` after a peer with
    ``h`` uniformly chosen blocks joins (hypergeometric law)."""
    if not 0 <= h <= B:
        raise ValidationError(f"h must lie in [0, {B}], got {h}")
    if not 0 <= k <= B:
        raise ValidationError(f"k must lie in [0, {B}], got {k}")
    if v < max(k, h) or v > min(B, k + h):
        return 0.0
    lp = _log_binom(k, h - (v - k)) + _log_binom(B - k, v - k) - _log_binom(B, h)
    return float(np.exp(lp))


def psi_matrix(B: int, h: int) -> np.ndarray:
    """Transition matrix ``M[k, v] = psi_h(k, v)`` from the closed formula."""
    k = np.arange(B + 1)[:, None]
    v = np.arange(B + 1)[None, :]
    support = (v >= np.maximum(k, h)) & (v <= np.minimum(B, k + h))
    kk, vv = np.broadcast_arrays(k, v)
    kk, vv = kk[support], vv[support]
    out = np.zeros((B + 1, B + 1))
    lp = _log_binom(kk, h - (vv - kk)) + _log_binom(B - kk, vv - kk) - _log_binom(B, h)
    out[support] = np.exp(lp)
    return out


@dataclass(frozen=True)
class PsiKernel:
    """``table[h, k, v] = psi_h(k, v)`` for ``0 <= h <= h_max``."""

    B: int
    table: np.ndarray

    def __call__(self, h: int, k: int, v: int) -> float:
        return float(self.table[h, k, v])


def psi_recursive(B: int, h_max: Optional[int] = None) -> PsiKernel:
    """Fill the psi kernel by adding the user's blocks one at a time.

    After ``h - 1`` picks that left ``u`` blocks available, the next pick is
    drawn from the ``B - h + 1`` unpicked blocks, ``B - u`` of which are new.
    Only sums and products of probabilities are involved.
    """
    if h_max is None:
        h_max = B
    if not 0 <= h_max <= B:
        raise ValidationError(f"h_max must lie in [0, {B}]")
    table = np.zeros((h_max + 1, B + 1, B + 1))
    table[0] = np.eye(B + 1)
    v = np.arange(B + 1, dtype=float)
    for h in range(1, h_max + 1):
        prev = table[h - 1]
        denom = B - h + 1
        # stays at v: the pick hits one of the v - (h - 1) unpicked available blocks
        stay = prev * np.clip(v - h + 1, 0, None) / denom
        # grows from v - 1: the pick hits one of the B - (v - 1) unavailable blocks
        grow = np.zeros_like(prev)
        grow[:, 1:] = prev[:, :-1] * (B - v[1:] + 1) / denom
        table[h] = stay + grow
    table.setflags(write=False)
    return PsiKernel(B=B, table=table)


def psi_tail_sum(B: int, k: int, v: int) -> float:
    """Sum of ``psi_h(k, v)`` over ``h`` from ``max(0, v - k)`` to ``B - 1``.

    The result has the closed value ``(B+1)/(B-k+1)`` for ``v < B`` and
    ``k/(B-k+1)`` for ``v = B``; a mismatch raises :class:`NumericalCheckError`.
    """
    if not 0 <= k <= v <= B:
        raise ValidationError("need 0 <= k <= v <= B")
    h = np.arange(max(0, v - k), B)
    lo = np.maximum(k, h)
    hi = np.minimum(B, k + h)
    ok = (v >= lo) & (v <= hi)
    h = h[ok]
    lp = _log_binom(k, h - (v - k)) + _log_binom(B - k, v - k) - _log_binom(B, h)
    total = float(np.exp(lp).sum())
    expected = (B + 1) / (B - k + 1) if v < B else k / (B - k + 1)
    if abs(total - expected) > 1e-10:
        raise NumericalCheckError(
            f"psi tail sum for B={B}, k={k}, v={v}: {total!r} != {expected!r}"
        )
    return total


# --------------------------------------------------------------------------
# conditional tables p_n(v)


@dataclass(frozen=True)
class CondAvailTable:
    B: int
    N: int
    gamma_mode: GammaMode
    p: np.ndarray  # shape (N + 1, B + 1)

    def row(self, n: int) -> np.ndarray:
        return self.p[n]


def _freeze(B, N, mode, p) -> CondAvailTable:
    p.setflags(write=False)
    return CondAvailTable(B=B, N=N, gamma_mode=mode, p=p)


def _check_sizes(B, N):
    if B < 1:
        raise ValidationError("B must be >= 1")
    if N < 0:
        raise ValidationError("N must be >= 0")


def cond_avail_lemma(B: int, N: int) -> CondAvailTable:
    """Reference table for ``gamma = inf``: each added peer sits in a
    uniformly chosen stage ``h < B`` and contributes ``h`` uniform blocks.

    Oracle-grade; the kernel costs O(B^3) to build.
    """
    _check_sizes(B, N)
    kernel = psi_recursive(B, B - 1).table
    step = kernel.sum(axis=0) / B  # average over the B leecher stages
    p = np.zeros((N + 1, B + 1))
    p[0, 0] = 1.0
    for n in range(1, N + 1):
        p[n] = p[n - 1] @ step
    return _freeze(B, N, GammaMode.INFINITE, p)


def _growth_coefficient(B: int, v: np.ndarray) -> np.ndarray:
    return (B + 1) / (B * (B - v + 1))


def cond_avail_fast(B: int, N: int) -> CondAvailTable:
    """O(N B) table for ``gamma = inf``.

    ``p_n(0) = B**-n`` and each further column adds the previous row's
    entry weighted by ``(B+1)/(B(B-v+1))``; the last column is the
    complement of the others.
    """
    _check_sizes(B, N)
    p = np.zeros((N + 1, B + 1))
    p[0, 0] = 1.0
    v = np.arange(1, B)
    coef = _growth_coefficient(B, v)
    for n in range(1, N + 1):
        row = p[n]
        row[0] = float(B) ** (-n)
        if B > 1:
            row[1:B] = row[0] + np.cumsum(p[n - 1, 1:B] * coef)
        rest = 1.0 - row[:B].sum()
        if rest < -_CLAMP_TOL:
            raise NumericalCheckError(f"p_{n}(B) = {rest!r} < 0 for B={B}")
        row[B] = max(rest, 0.0)
    return _freeze(B, N, GammaMode.INFINITE, p)


def cond_avail_fast_seeded(B: int, N: int) -> CondAvailTable:
    """O(N B) table for ``gamma = mu``; seeds form an extra stage ``B``."""
    _check_sizes(B, N)
    p = np.zeros((N + 1, B + 1))
    p[0, 0] = 1.0
    v = np.arange(1, B + 1)
    coef = 1.0 / (B - v + 1)
    for n in range(1, N + 1):
        row = p[n]
        row[0] = float(B + 1) ** (-n)
        row[1:] = row[0] + np.cumsum(p[n - 1, 1:] * coef)
        err = abs(row.sum() - 1.0)
        if err > _ROW_TOL:
            raise NumericalCheckError(f"row {n} of seeded table sums to 1{err:+.3g}")
    return _freeze(B, N, GammaMode.EQUAL_MU, p)


def stage_avail_dist(B: int, stages: Sequence[int]) -> np.ndarray:
    """P(V = v | stage vector) by folding psi over the peers one at a time.

    ``stages[h]`` is the number of peers holding ``h`` blocks.
    """
    dist = np.zeros(B + 1)
    dist[0] = 1.0
    for h, count in enumerate(stages):
        if count and h > 0:
            m = psi_matrix(B, h)
            for _ in range(int(count)):
                dist = dist @ m
    return dist


# --------------------------------------------------------------------------
# unconditional distribution


@dataclass(frozen=True)
class AvailDist:
    """Distribution of the number of available blocks.

    ``probs`` is ``None`` when only the self-sustainability is known (finite
    seed departure rate other than ``mu``); reading :attr:`p` then raises.
    """

    B: int
    gamma_mode: GammaMode
    A: float
    trunc_error: float
    N: int
    probs: Optional[np.ndarray] = None

    @property
    def p(self) -> np.ndarray:
        if self.probs is None:
            raise CapabilityError(
                "the full availability distribution is only available for "
                "gamma = inf or gamma = mu; only A is known here"
            )
        return self.probs

    @property
    def mean(self) -> float:
        return float(np.arange(self.B + 1) @ self.p)


def mix(table: CondAvailTable, total_mean: float, N: Optional[int] = None) -> np.ndarray:
    """Poisson(total_mean)-weighted sum of the first ``N + 1`` table rows."""
    if N is None:
        N = table.N
    if N > table.N:
        raise ValidationError(f"table has {table.N} rows, {N} requested")
    w = poisson_pmf(total_mean, np.arange(N + 1))
    return w @ table.p[: N + 1]


def _check_table_size(B: int, N: int) -> None:
    if (N + 1) * (B + 1) > MAX_TABLE_CELLS:
        raise CapabilityError(
            f"the load needs {N + 1} population rows for B = {B}, beyond the "
            f"{MAX_TABLE_CELLS} table cells this engine builds"
        )


def avail_distribution(params: ModelParams, eta: float = DEFAULT_ETA) -> AvailDist:
    """Unconditional availability distribution for homogeneous block rates."""
    load = validate(params)
    if params.is_heterogeneous:
        raise ValidationError("block rates differ; use het_avail / het_avail_fast")
    B = params.n_blocks
    mode = params.gamma_mode
    if mode is GammaMode.EQUAL_MU:
        mean = (B + 1) * load.rho
        N = choose_truncation(mean, eta)
        _check_table_size(B, N)
        probs = mix(cond_avail_fast_seeded(B, N), mean)
        return AvailDist(B, mode, float(probs[B]), poisson_tail(mean, N), N, probs)

    mean = B * load.rho
    N = choose_truncation(mean, eta)
    _check_table_size(B, N)
    probs = mix(cond_avail_fast(B, N), mean)
    a_inf = float(probs[B])
    tail = poisson_tail(mean, N)
    if mode is GammaMode.INFINITE:
        return AvailDist(B, mode, a_inf, tail, N, probs)
    # finite gamma: a block is missing iff no leecher holds it and no seed is present
    a = 1.0 - (1.0 - a_inf) * math.exp(-params.arrival_rate / params.gamma_rate)
    return AvailDist(B, mode, a, tail, N, None)


# --------------------------------------------------------------------------
# heterogeneous block download rates


def _het_setup(params: ModelParams, M: Optional[int], eta: float):
    validate(params)
    if not isinstance(params.mu, tuple):
        raise ValidationError("scalar mu: use avail_distribution for equal block rates")
    if params.gamma_mode is not GammaMode.INFINITE:
        raise CapabilityError("heterogeneous rates are supported for gamma = inf only")
    means = params.stage_means()
    if M is None:
        M = choose_truncation(float(means.max()), eta / params.n_blocks)
    if M < 0:
        raise ValidationError("M must be >= 0")
    return params.n_blocks, means, int(M)


def _het_run(B, means, M, add_peer) -> AvailDist:
    a = np.zeros(B + 1)
    a[0] = 1.0
    kept = 1.0
    r = np.arange(M + 1)
    # stages B-1 down to 1; stage 0 peers hold nothing and leave V unchanged
    for h in range(B - 1, 0, -1):
        w = poisson_pmf(means[h], r)
        kept *= float(w.sum())
        mixed = w[0] * a
        cur = a
        for rr in range(1, M + 1):
            cur = add_peer(cur, h)
            mixed = mixed + w[rr] * cur
        a = mixed
    return AvailDist(
        B=B,
        gamma_mode=GammaMode.INFINITE,
        A=float(a[B]),
        trunc_error=max(0.0, 1.0 - kept),
        N=M,
        probs=a,
    )


def het_avail(params: ModelParams, M: Optional[int] = None, eta: float = DEFAULT_ETA) -> AvailDist:
    """Availability distribution with per-block download rates, O(B^3 M).

    Works backwards from the last leecher stage: conditioned on the peers in
    stages above ``h``, each of the ``r`` peers in stage ``h`` is folded in
    through ``psi_h``, and the stage occupancy is then averaged over its
    Poisson law truncated at ``M`` peers.
    """
    B, means, M = _het_setup(params, M, eta)
    mats = {}

    def add_peer(dist, h):
        if h not in mats:
            mats[h] = psi_matrix(B, h)
        return dist @ mats[h]

    return _het_run(B, means, M, add_peer)


def het_avail_fast(params: ModelParams, M: Optional[int] = None, eta: float = DEFAULT_ETA) -> AvailDist:
    """Same result as :func:`het_avail`, folding peers in by convolution.

    Rescaling the distribution by ``k!(B-k)!`` turns the psi step into a
    convolution with ``1/(j!(h-j)!)``; the factorials are kept in log space
    and normalised so the operands stay bounded.
    """
    B, means, M = _het_setup(params, M, eta)
    if B > 1000:
        raise CapabilityError("convolution path overflows beyond 1000 blocks")
    lf = special.gammaln(np.arange(B + 1, dtype=float) + 1.0)  # lf[i] = log(i!)
    k = np.arange(B + 1)
    scale = np.exp(lf[k] + lf[B - k] - lf[B])  # k!(B-k)!/B!
    kernels = {}

    def add_peer(dist, h):
        if h not in kernels:
            j = np.arange(h + 1)
            psi_hat = np.exp(lf[h] - lf[j] - lf[h - j])  # h!/(j!(h-j)!)
            vv = np.arange(h, B)
            unscale = np.exp(lf[B - h] - lf[vv - h] - lf[B - vv])
            kernels[h] = (psi_hat, unscale)
        psi_hat, unscale = kernels[h]
        conv = np.convolve(dist * scale, psi_hat)[: B + 1]
        out = np.zeros(B + 1)
        out[h:B] = conv[h:B] * unscale
        out[B] = max(dist.sum() - out[:B].sum(), 0.0)
        return out

    return _het_run(B, means, M, add_peer)
