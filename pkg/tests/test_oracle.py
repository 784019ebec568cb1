import itertools
from fractions import Fraction

import numpy as np
import pytest

from selfsustain import (
    CapabilityError,
    ModelParams,
    Signature,
    StageVector,
    ValidationError,
    avail_distribution,
    ctmc_replicate,
    ctmc_simulate,
    enumerate_cond_dist,
    exact_all_available,
    mc_avail_dist,
    stage_avail_dist,
)
from selfsustain.oracle import poisson_occupancy_pvalue


def test_exact_examples():
    assert exact_all_available(2, [0, 2], as_fraction=True) == Fraction(1, 2)
    assert exact_all_available(2, [0, 1]) == 0.0
    assert exact_all_available(3, []) == 0.0
    assert exact_all_available(3, {3: 1}) == 1.0


def test_exact_limits():
    with pytest.raises(CapabilityError):
        exact_all_available(31, [0, 1])
    with pytest.raises(ValidationError):
        exact_all_available(3, [0, -1])
    with pytest.raises(CapabilityError):
        enumerate_cond_dist(12, [0, 0, 0, 0, 0, 0, 3])


def test_enumeration_small_case_by_hand():
    # two peers with one block each among two blocks: same block or not
    assert enumerate_cond_dist(2, [0, 2], as_fraction=True) == [0, Fraction(1, 2), Fraction(1, 2)]


@pytest.mark.parametrize("B", [3, 5])
def test_exact_matches_psi_folding(B):
    for n in itertools.product(range(3), repeat=B):
        if sum(n) > 3:
            continue
        assert exact_all_available(B, n) == pytest.approx(stage_avail_dist(B, n)[B], abs=1e-12)


def test_types_validate():
    assert StageVector.of(3, [1, 2]).n == (1, 2, 0, 0)
    assert StageVector.of(3, {1: 2}).total == 2
    with pytest.raises(ValidationError):
        StageVector.of(2, [0, 0, 0, 1])
    Signature(0b101, 2)
    with pytest.raises(ValidationError):
        Signature(0b101, 1)


def test_mc_interval_covers_model_and_is_reproducible():
    params = ModelParams(6, 0.4, 1.0, "mu")
    exact = avail_distribution(params, eta=1e-12).p
    a = mc_avail_dist(params, 50_000, seed=3)
    b = mc_avail_dist(params, 50_000, seed=3)
    assert np.array_equal(a.p, b.p)
    assert np.all((a.lower <= exact + 1e-12) & (exact <= a.upper + 1e-12))
    with pytest.raises(ValidationError):
        mc_avail_dist(ModelParams(6, 0.4, 1.0, 0.3), 10, 0)


def test_ctmc_short_run_and_errors():
    params = ModelParams(4, 0.5, 1.0, "inf")
    m1 = ctmc_simulate(params, 2000, seed=1, snapshot_period=5.0)
    m2 = ctmc_simulate(params, 2000, seed=1, snapshot_period=5.0)
    assert m1.self_sustainability == m2.self_sustainability
    assert 0.0 <= m1.self_sustainability <= 1.0
    assert m1.v_dist.sum() == pytest.approx(1.0)
    assert m1.snapshots.shape[1] == 4
    with pytest.raises(ValidationError):
        ctmc_simulate(ModelParams(4, 0.5, 1.0, "mu"), 100, 0)
    with pytest.raises(ValidationError):
        ctmc_replicate(params, 100, 0, 1)


def test_ctmc_stage_occupancy_is_poisson():
    params = ModelParams(4, 1.5, 1.0, "inf")
    runs = ctmc_replicate(params, 20_000, seed=9, replications=4, snapshot_period=10.0)
    snaps = np.concatenate([r.snapshots for r in runs.runs])
    for h in range(4):
        assert poisson_occupancy_pvalue(snaps[:, h], 1.5) > 0.001
    A = avail_distribution(params, eta=1e-12).A
    assert abs(runs.mean - A) <= 4 * runs.stderr + 0.01


def test_occupancy_test_rejects_wrong_mean():
    rng = np.random.default_rng(0)
    assert poisson_occupancy_pvalue(rng.poisson(3.0, 5000), 3.0) > 0.001
    assert poisson_occupancy_pvalue(rng.poisson(3.0, 5000), 3.5) < 0.001
