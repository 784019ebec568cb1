import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfsustain import (
    B_STABLE,
    CapabilityError,
    GammaMode,
    LoadMode,
    ModelParams,
    PrecisionError,
    ValidationError,
    avail_distribution,
    bonferroni_bounds,
    cond_avail_closed_inf,
    cond_avail_closed_seeded,
    cond_avail_fast,
    cond_avail_fast_seeded,
    mean_available,
    min_load,
    seeded_from_inf,
    self_sust_closed_seeded,
    tagged_unavail_prob,
)
from selfsustain.closed_form import find_stable_limit


def test_seeded_closed_form_examples():
    assert cond_avail_closed_seeded(1, 1, 1) == pytest.approx(0.5)
    assert cond_avail_closed_seeded(3, 1, 0) == pytest.approx(0.25)
    row = cond_avail_fast_seeded(12, 7).p[7]
    assert np.allclose([cond_avail_closed_seeded(12, 7, v) for v in range(13)], row, atol=1e-8, rtol=0)


def test_infinite_closed_form_examples():
    assert np.allclose([cond_avail_closed_inf(3, 1, v) for v in range(3)], 1 / 3)
    for B in (2, 5, 17):
        assert cond_avail_closed_inf(B, 1, 0) == pytest.approx(1 / B)
    row = cond_avail_fast(10, 5).p[5]
    assert np.allclose([cond_avail_closed_inf(10, 5, v) for v in range(11)], row, atol=1e-8, rtol=0)


def test_closed_forms_refuse_beyond_stable_range():
    with pytest.raises(PrecisionError):
        cond_avail_closed_seeded(B_STABLE + 1, 3, 2)
    with pytest.raises(PrecisionError):
        cond_avail_closed_inf(B_STABLE + 1, 3, 2)
    with pytest.raises(PrecisionError):
        self_sust_closed_seeded(B_STABLE + 1, 1.0)
    assert issubclass(PrecisionError, CapabilityError)


def test_stable_limit_is_measured():
    # the constant is the largest B passing the 1e-7 scan
    assert 40 <= B_STABLE <= 60
    assert find_stable_limit(B_max=B_STABLE + 1) == B_STABLE


def test_d0_examples():
    for rho in (0.2, 1.0, 2.5):
        assert self_sust_closed_seeded(1, rho) == pytest.approx(1 - math.exp(-rho), abs=1e-15)
    for B in (1, 7, 30):
        assert self_sust_closed_seeded(B, 0.0) == pytest.approx(0.0, abs=1e-15)
    b = bonferroni_bounds(16, 2.0)
    assert b.lower <= self_sust_closed_seeded(16, 2.0) <= b.upper


def _alpha_recursion(B, rho, l, m_max=200):
    """Probability that l tagged blocks are missing (seeds linger), from the
    stage-by-stage recursion: a stage-j user misses all of them with
    probability C(B-j, l)/C(B, l), and stages hold Poisson(rho) users."""
    alpha = 1.0
    for j in range(B, 0, -1):
        beta = math.comb(B - j, l) / math.comb(B, l)
        term, total = math.exp(-rho), 0.0
        for m in range(m_max):
            total += term
            term *= rho * beta / (m + 1)
        alpha *= total
    return alpha


@pytest.mark.parametrize("B,rho", [(1, 0.5), (4, 1.0), (10, 0.3), (16, 2.0)])
def test_tagged_matches_stage_recursion(B, rho):
    for l in range(B + 1):
        assert tagged_unavail_prob(B, rho, l).prob == pytest.approx(_alpha_recursion(B, rho, l), rel=1e-12)


def test_tagged_examples():
    assert tagged_unavail_prob(10, 1.3, 0).prob == 1.0
    assert tagged_unavail_prob(10, 1.3, 1).prob == pytest.approx(math.exp(-1.3 * 11 / 2))
    assert tagged_unavail_prob(10, 1.3, 10).prob == pytest.approx(math.exp(-13.0))
    with pytest.raises(ValidationError):
        tagged_unavail_prob(3, 1.0, 4)


@given(st.integers(1, 40), st.floats(0, 5), st.floats(0, 1))
def test_tagged_monotone(B, rho, drho):
    probs = [tagged_unavail_prob(B, rho, l).prob for l in range(B + 1)]
    assert all(b <= a + 1e-15 for a, b in zip(probs, probs[1:]))
    assert tagged_unavail_prob(B, rho + drho, 1).prob <= probs[1] + 1e-15


def test_mean_available_examples():
    assert mean_available(16, 0.0, GammaMode.EQUAL_MU) == 0.0
    assert mean_available(1, 0.7, GammaMode.EQUAL_MU) == pytest.approx(1 - math.exp(-0.7))
    ev = mean_available(16, 1.0, GammaMode.EQUAL_MU)
    assert ev == pytest.approx(16 * (1 - math.exp(-8.5)))
    assert ev == pytest.approx(avail_distribution(ModelParams(16, 1.0, 1.0, "mu")).mean, rel=1e-6)
    with pytest.raises(ValidationError):
        mean_available(4, 1.0, GammaMode.FINITE)


def test_bonferroni_examples():
    b = bonferroni_bounds(10, 2.0)
    assert b.lower <= self_sust_closed_seeded(10, 2.0) <= b.upper
    big = bonferroni_bounds(10, 50.0)
    assert big.lower == pytest.approx(1.0) and big.upper == pytest.approx(1.0)
    assert bonferroni_bounds(4, 1.6).implies_growth()


@given(st.integers(4, 64), st.floats(1.6, 4.0))
def test_bounds_imply_growth_in_blocks(B, rho):
    assert bonferroni_bounds(B, rho).upper <= bonferroni_bounds(B + 1, rho).lower


def test_min_load_examples():
    assert min_load(16, 0.9).rho == pytest.approx(2 * math.log(160) / 15)
    assert min_load(16, 0.9).rho == pytest.approx(0.6767, abs=1e-4)
    assert min_load(20, 1e-9).rho == pytest.approx(2 * math.log(20) / 19, rel=1e-8)
    with pytest.raises(CapabilityError):
        min_load(1, 0.9)
    with pytest.raises(ValidationError):
        min_load(16, 1.0)


@pytest.mark.parametrize("B,target", [(10, 0.999), (16, 0.9), (64, 0.99)])
def test_exact_min_load_hits_target(B, target):
    res = min_load(B, target, LoadMode.EXACT)
    assert abs(res.achieved - target) <= 1e-6
    assert res.coverage == pytest.approx(B * res.rho)


def test_seeded_from_inf_examples():
    assert seeded_from_inf(1.0, 0.3, 0.1) == 1.0
    assert seeded_from_inf(0.0, math.log(2), 1.0) == pytest.approx(0.5)
    assert seeded_from_inf(0.4, 1.0, 1e300) == pytest.approx(0.4)
    with pytest.raises(ValidationError):
        seeded_from_inf(1.2, 1.0, 1.0)
