import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfsustain import (
    GammaMode,
    ModelParams,
    ValidationError,
    choose_truncation,
    poisson_pmf,
    validate,
)
from selfsustain.params import make_rng, poisson_tail, substream


def test_equal_rates_load_profile():
    load = validate(ModelParams(16, 0.15, 0.15, "inf"))
    assert load.rho == pytest.approx(1.0)
    assert np.allclose(load.sigma, 1 / 16)
    assert load.total_mean == pytest.approx(16.0)


def test_seeded_total_mean_counts_the_seed_stage():
    load = validate(ModelParams(16, 0.15, 0.15, "mu"))
    assert load.total_mean == pytest.approx(17.0)


def test_sigma_for_rate_vector():
    load = validate(ModelParams(3, 0.1, (1.0, 1.0, 2.0)))
    assert np.allclose(load.sigma, [0.4, 0.4, 0.2], atol=1e-15)


def test_per_minute_arrivals_give_expected_load():
    assert validate(ModelParams(16, 8 / 60, 0.15)).rho == pytest.approx(0.8888888888888888)


def test_gamma_modes():
    assert ModelParams(4, 1, 1, "inf").gamma_mode is GammaMode.INFINITE
    assert ModelParams(4, 1, 1, "mu").gamma_mode is GammaMode.EQUAL_MU
    assert ModelParams(4, 1, 2.0, 2.0).gamma_mode is GammaMode.EQUAL_MU
    assert ModelParams(4, 1, 1, 0.5).gamma_mode is GammaMode.FINITE


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_blocks=0, arrival_rate=1, mu=1),
        dict(n_blocks=3, arrival_rate=-1, mu=1),
        dict(n_blocks=3, arrival_rate=1, mu=0),
        dict(n_blocks=3, arrival_rate=1, mu=(1, 1)),
        dict(n_blocks=3, arrival_rate=1, mu=(1, -1, 1)),
        dict(n_blocks=3, arrival_rate=1, mu=1, gamma=0.0),
        dict(n_blocks=3, arrival_rate=float("nan"), mu=1),
    ],
)
def test_invalid_parameters_rejected(kwargs):
    with pytest.raises(ValidationError):
        validate(ModelParams(**kwargs))


def test_bad_gamma_string():
    with pytest.raises(ValidationError):
        ModelParams(3, 1, 1, "sometimes")


def test_poisson_pmf_small_values():
    assert poisson_pmf(0, 0) == 1.0
    assert poisson_pmf(1, 1) == pytest.approx(math.exp(-1), rel=1e-15)


def test_poisson_pmf_large_argument_against_log_gamma():
    ref = math.exp(500 * math.log(500) - 500 - math.lgamma(501))
    assert poisson_pmf(500, 500) == pytest.approx(ref, rel=1e-12)


def test_truncation_vacuous_tolerance():
    assert choose_truncation(7.5, 1.0) == 0


def test_truncation_matches_direct_tail_sum():
    N = choose_truncation(1.0, 1e-9)
    pmf = [math.exp(-1) / math.factorial(n) for n in range(60)]
    tail = lambda n: sum(pmf[n + 1 :])
    assert tail(N) <= 1e-9 < tail(N - 1)


def test_truncation_large_mean_uses_exact_tail():
    N = choose_truncation(1600.0, 1e-6)
    assert poisson_tail(1600.0, N) <= 1e-6 < poisson_tail(1600.0, N - 1)
    from scipy.stats import norm

    assert abs((N - 1600) / 40 - norm.isf(1e-6)) <= 2


@given(st.floats(0.01, 200), st.floats(1e-12, 0.5))
def test_truncation_covers_mass(mean, eta):
    N = choose_truncation(mean, eta)
    assert float(np.sum(poisson_pmf(mean, np.arange(N + 1)))) >= 1 - eta - 1e-12


@given(st.floats(0.01, 200), st.floats(1e-12, 0.5), st.floats(1e-12, 0.5))
def test_truncation_monotone_in_eta(mean, e1, e2):
    lo, hi = sorted((e1, e2))
    assert choose_truncation(mean, lo) >= choose_truncation(mean, hi)


@given(st.floats(0.01, 200), st.floats(0.01, 200), st.floats(1e-12, 0.5))
def test_truncation_monotone_in_mean(m1, m2, eta):
    lo, hi = sorted((m1, m2))
    assert choose_truncation(lo, eta) <= choose_truncation(hi, eta)


@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=30))
def test_sigma_sums_to_one(rates):
    load = validate(ModelParams(len(rates), 0.3, tuple(rates)))
    assert abs(load.sigma.sum() - 1.0) <= 1e-12


def test_substreams_are_deterministic_and_leave_parent_alone():
    parent = np.random.SeedSequence(42)
    a = make_rng(substream(parent, 1)).random()
    b = make_rng(substream(parent, 1)).random()
    c = make_rng(substream(parent, 2)).random()
    assert a == b != c
    assert parent.n_children_spawned == 0
    assert make_rng(substream(42, 1)).random() == a
