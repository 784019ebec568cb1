"""Closed forms, moments, bounds and design formulas.

The alternating binomial sums lose precision as ``B`` grows, so they are
accumulated in extended precision with compensated summation and refused
beyond :data:`B_STABLE`; the recursions in :mod:`.availability` have no
such limit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .availability import avail_distribution, cond_avail_fast, mix
from .errors import CapabilityError, NumericalCheckError, PrecisionError, ValidationError
from .params import DEFAULT_ETA, GammaMode, choose_truncation

#: Largest block count for which the closed forms agree with the recursions
#: to 1e-7 over n <= 60 and rho >= 0.05; see :func:`find_stable_limit`.
B_STABLE = 47

_LD = np.longdouble


def _ld_int(x: int) -> np.longdouble:
    return _LD(str(x))


def _neumaier(terms: Iterable) -> np.longdouble:
    s = _LD(0)
    c = _LD(0)
    for t in terms:
        u = s + t
        if abs(s) >= abs(t):
            c += (s - u) + t
        else:
            c += (t - u) + s
        s = u
    return s + c


def _require_stable(B: int, check: bool):
    if B < 1:
        raise ValidationError("B must be >= 1")
    if check and B > B_STABLE:
        raise PrecisionError(
            f"closed form is unreliable for B={B} > {B_STABLE}; use the recursion instead"
        )


def _split_ratio(num: int, den: int):
    """``num/den`` as an unevaluated pair ``hi + lo`` of extended floats."""
    hi = _ld_int(num) / _ld_int(den)
    p, q = hi.as_integer_ratio()
    lo = _ld_int(num * q - p * den) / _ld_int(q * den)
    return hi, lo


def _alt_sum(B: int, n: int, v: int, scale: int = 1) -> np.longdouble:
    # scale * sum_l C(v,l) (-1)^l (B-v+l+1)^-n, each term split into hi + lo
    # so that rounding of the large terms does not survive the cancellation
    parts = []
    for l in range(v + 1):
        hi, lo = _split_ratio(scale * math.comb(v, l), (B - v + l + 1) ** n)
        if l % 2:
            hi, lo = -hi, -lo
        parts.append(hi)
        parts.append(lo)
    return _neumaier(parts)


def _check_nv(B, n, v):
    if n < 0:
        raise ValidationError("n must be >= 0")
    if not 0 <= v <= B:
        raise ValidationError(f"v must lie in [0, {B}]")


def cond_avail_closed_seeded(B: int, n: int, v: int, *, check_range: bool = True) -> float:
    """p_n(v) for ``gamma = mu`` in closed form."""
    _require_stable(B, check_range)
    _check_nv(B, n, v)
    if n == 0:
        return 1.0 if v == 0 else 0.0
    return float(_alt_sum(B, n, v, math.comb(B, v)))


def cond_avail_closed_inf(B: int, n: int, v: int, *, check_range: bool = True) -> float:
    """p_n(v) for ``gamma = inf`` in closed form; ``v = B`` by complement."""
    _require_stable(B, check_range)
    _check_nv(B, n, v)
    if n == 0:
        return 1.0 if v == 0 else 0.0

    def below(w):
        return (_LD(B + 1) / _LD(B)) ** n * _alt_sum(B, n, w, math.comb(B, w))

    if v < B:
        return float(below(v))
    return float(_LD(1) - _neumaier(below(w) for w in range(B)))


def self_sust_closed_seeded(B: int, rho: float, *, check_range: bool = True) -> float:
    """Self-sustainability for ``gamma = mu`` by inclusion/exclusion over
    the sets of blocks missing among peers."""
    _require_stable(B, check_range)
    if rho < 0:
        raise ValidationError("rho must be >= 0")
    r = _LD(rho)
    total = _neumaier(
        (-1) ** l * _ld_int(math.comb(B, l)) * np.exp(-_LD(B + 1) * r * l / (l + 1))
        for l in range(B + 1)
    )
    return float(total)


@dataclass(frozen=True)
class TaggedBlockProb:
    B: int
    rho: float
    l: int
    prob: float


def tagged_unavail_prob(B: int, rho: float, l: int) -> TaggedBlockProb:
    """Probability that ``l`` given blocks are all missing among peers
    (``gamma = mu``)."""
    if not 0 <= l <= B:
        raise ValidationError(f"l must lie in [0, {B}]")
    if rho < 0:
        raise ValidationError("rho must be >= 0")
    prob = math.exp(-rho * l * (B + 1) / (l + 1))
    return TaggedBlockProb(B=B, rho=rho, l=l, prob=prob)


def block_unavail_prob(B: int, rho: float, gamma_mode: GammaMode) -> float:
    """Probability that one given block is missing among peers."""
    if gamma_mode is GammaMode.EQUAL_MU:
        return math.exp(-rho * (B + 1) / 2)
    if gamma_mode is GammaMode.INFINITE:
        return math.exp(-rho * (B - 1) / 2)
    raise ValidationError("gamma_mode must be INFINITE or EQUAL_MU")


def mean_available(B: int, rho: float, gamma_mode: GammaMode) -> float:
    """E[V] = B (1 - q), q the single-block unavailability."""
    return B * (1.0 - block_unavail_prob(B, rho, gamma_mode))


@dataclass(frozen=True)
class BonferroniBounds:
    B: int
    rho: float
    lower: float
    upper: float

    def implies_growth(self) -> bool:
        """True when ``upper(B) <= lower(B + 1)``, i.e. adding a block cannot
        lower the self-sustainability at this load."""
        return self.upper <= bonferroni_bounds(self.B + 1, self.rho).lower


def bonferroni_bounds(B: int, rho: float) -> BonferroniBounds:
    """First two Bonferroni bounds on the ``gamma = mu`` self-sustainability."""
    if B < 1 or rho < 0:
        raise ValidationError("need B >= 1 and rho >= 0")
    lower = 1.0 - B * math.exp(-(B + 1) * rho / 2)
    upper = lower + (B * (B - 1) / 2) * math.exp(-2 * (B + 1) * rho / 3)
    if B >= 4 and rho >= 1.6:
        nxt = 1.0 - (B + 1) * math.exp(-(B + 2) * rho / 2)
        if upper > nxt:
            raise NumericalCheckError(f"growth inequality fails at B={B}, rho={rho}")
    return BonferroniBounds(B=B, rho=rho, lower=lower, upper=upper)


class LoadMode(enum.Enum):
    APPROX = "approx"
    EXACT = "exact"


@dataclass(frozen=True)
class MinLoad:
    rho: float
    coverage: float
    achieved: float = math.nan


_RHO_LO = 1e-6
_RHO_HI = 64.0


def _a_inf_curve(B: int, rho_hi: float, eta: float):
    N_max = choose_truncation(B * rho_hi, eta)
    table = cond_avail_fast(B, N_max)

    def A(rho):
        mean = B * rho
        N = min(choose_truncation(mean, eta), N_max)
        return float(mix(table, mean, N)[B])

    return A


def min_load(B: int, A_star: float, mode=LoadMode.APPROX, eta: float = DEFAULT_ETA) -> MinLoad:
    """Smallest per-stage load giving self-sustainability ``A_star`` when
    seeds leave at once.

    APPROX uses ``A ~ 1 - B q_inf``; EXACT bisects the recursion's ``A``,
    which grows with the load.
    """
    mode = LoadMode(mode)
    if not 0.0 < A_star < 1.0:
        raise ValidationError("target self-sustainability must lie in (0, 1)")
    if B < 1:
        raise ValidationError("B must be >= 1")
    if B == 1:
        raise CapabilityError("a single-block file is never held by leechers")
    if mode is LoadMode.APPROX:
        rho = 2.0 * math.log(B / (1.0 - A_star)) / (B - 1)
        return MinLoad(rho=rho, coverage=B * rho)

    lo, hi = _RHO_LO, _RHO_HI
    A = _a_inf_curve(B, hi, eta)
    while A(hi) < A_star:
        lo, hi = hi, hi * 2
        if hi > 1e6:
            raise CapabilityError("target not reached at any admissible load")
        A = _a_inf_curve(B, hi, eta)
    if A(lo) >= A_star:
        return MinLoad(rho=lo, coverage=B * lo, achieved=A(lo))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        a_mid = A(mid)
        if a_mid < A_star:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return MinLoad(rho=hi, coverage=B * hi, achieved=A(hi))


def seeded_from_inf(A_inf: float, lam: float, gamma: float) -> float:
    """Self-sustainability with lingering seeds from the no-seed value:
    a block is missing only if no leecher has it and no seed is present."""
    if not 0.0 <= A_inf <= 1.0:
        raise ValidationError("A_inf must lie in [0, 1]")
    if gamma <= 0:
        raise ValidationError("gamma must be > 0")
    return 1.0 - (1.0 - A_inf) * math.exp(-lam / gamma)


def find_stable_limit(tol: float = 1e-7, n_max: int = 60, rhos=(0.05, 0.25, 1.0, 4.0), B_max: int = 80) -> int:
    """Largest ``B`` (scanning upwards) where every closed form matches its
    recursion within ``tol``; used to pin :data:`B_STABLE`."""
    from .availability import cond_avail_fast_seeded
    from .params import ModelParams

    last_ok = 0
    for B in range(1, B_max + 1):
        seeded = cond_avail_fast_seeded(B, n_max).p
        inf = cond_avail_fast(B, n_max).p
        worst = 0.0
        for n in range(1, n_max + 1):
            for v in range(B + 1):
                worst = max(
                    worst,
                    abs(cond_avail_closed_seeded(B, n, v, check_range=False) - seeded[n, v]),
                    abs(cond_avail_closed_inf(B, n, v, check_range=False) - inf[n, v]),
                )
        for rho in rhos:
            ref = avail_distribution(ModelParams(B, rho, 1.0, "mu"), eta=1e-12).A
            worst = max(worst, abs(self_sust_closed_seeded(B, rho, check_range=False) - ref))
        if worst > tol:
            break
        last_ok = B
    return last_ok
