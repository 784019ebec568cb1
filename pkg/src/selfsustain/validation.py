"""Cross-engine consistency checks behind ``selfsustain validate``.

The quick level compares deterministic engines with each other and with
exact counting; the full level adds the Monte Carlo sampler, the CTMC and
the protocol simulator.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import availability as av
from . import closed_form as cf
from .oracle import ctmc_replicate, enumerate_cond_dist, exact_all_available, mc_avail_dist
from .params import GammaMode, ModelParams


@dataclass(frozen=True)
class Check:
    name: str
    tolerance: float
    deviation: float
    passed: bool
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return (
            f"{status}  {self.name:<32} deviation={self.deviation:.3g} "
            f"tolerance={self.tolerance:.3g} ({self.seconds:.1f}s){extra}"
        )


def _max_dev(pairs) -> float:
    worst = 0.0
    for a, b in pairs:
        worst = max(worst, float(np.max(np.abs(np.asarray(a) - np.asarray(b)))))
    return worst


def recursion_equivalence(B_max: int = 20, N: int = 50) -> float:
    return _max_dev(
        (av.cond_avail_fast(B, N).p, av.cond_avail_lemma(B, N).p) for B in range(1, B_max + 1)
    )


def closed_form_deviation(B_max: int = 30, n_max: int = 30) -> float:
    worst = 0.0
    for B in range(1, B_max + 1):
        seeded = av.cond_avail_fast_seeded(B, n_max).p
        inf = av.cond_avail_fast(B, n_max).p
        for n in range(1, n_max + 1):
            for v in range(B + 1):
                worst = max(
                    worst,
                    abs(cf.cond_avail_closed_seeded(B, n, v) - seeded[n, v]),
                    abs(cf.cond_avail_closed_inf(B, n, v) - inf[n, v]),
                )
    return worst


def d0_deviation(B_max: int = 30, rhos=(0.25, 0.5, 1.0, 2.0)) -> float:
    worst = 0.0
    for B in range(1, B_max + 1):
        for rho in rhos:
            ref = av.avail_distribution(ModelParams(B, rho, 1.0, "mu"), eta=1e-13).p[B]
            worst = max(worst, abs(cf.self_sust_closed_seeded(B, rho) - ref))
    return worst


def _pascal(n_max: int, pad: int) -> np.ndarray:
    """Binomials ``C[n, pad + m]`` in floating point, zero for m < 0 or m > n."""
    C = np.zeros((n_max + 1, 2 * pad + n_max + 2))
    C[0, pad] = 1.0
    for n in range(1, n_max + 1):
        C[n, pad : pad + n + 1] = C[n - 1, pad : pad + n + 1] + C[n - 1, pad - 1 : pad + n]
    return C


def psi_deviations(B_max: int):
    """Worst deviations over B <= B_max of: the recursive kernel from the
    hypergeometric formula (evaluated from a Pascal table), its row sums
    from 1, and its tail sums from their closed values."""
    from numpy.lib.stride_tricks import sliding_window_view

    pad = B_max + 1
    C = _pascal(B_max, pad)
    rec = rows = tail = 0.0
    for B in range(1, B_max + 1):
        T = av.psi_recursive(B).table
        n = B + 1
        inv = 1.0 / C[B, pad : pad + n]
        for k in range(n):
            # rows h, columns v: C(k, h - v + k) is Toeplitz in (h, v)
            c = C[k, pad + k - B : pad + k + B + 1][::-1]
            toeplitz = sliding_window_view(c, n)[::-1]
            direct = toeplitz * C[B - k, pad - k : pad - k + n][None, :] * inv[:, None]
            rec = max(rec, float(np.abs(direct - T[:, k, :]).max()))
        rows = max(rows, float(np.abs(T.sum(axis=2) - 1.0).max()))
        kk = np.arange(n)[:, None]
        vv = np.arange(n)[None, :]
        closed = np.where(vv < B, (B + 1) / (B - kk + 1), kk / (B - kk + 1))
        tail = max(tail, float(np.abs(np.where(vv >= kk, T[:B].sum(axis=0) - closed, 0.0)).max()))
    return rec, rows, tail


def _stage_vectors(B: int, max_users: int):
    for n in itertools.product(range(max_users + 1), repeat=B):
        if sum(n) <= max_users:
            yield n


def oracle_deviation(B_max: int = 4, max_users: int = 4) -> float:
    """Exact counting versus folding psi over the peers, all stage vectors
    with stages 0..B-1 and at most ``max_users`` peers."""
    worst = 0.0
    for B in range(1, B_max + 1):
        for n in _stage_vectors(B, max_users):
            analytic = av.stage_avail_dist(B, n)
            worst = max(
                worst,
                abs(exact_all_available(B, n) - analytic[B]),
                float(np.abs(enumerate_cond_dist(B, n) - analytic).max()),
            )
    return worst


def moment_deviation(B_max: int = 30, rhos=(0.1, 0.5, 1.0, 2.0)) -> float:
    """Relative error of E[V] in closed form against the distribution mean."""
    worst = 0.0
    for B in range(1, B_max + 1):
        for rho in rhos:
            for mode, gamma in ((GammaMode.EQUAL_MU, "mu"), (GammaMode.INFINITE, "inf")):
                mean = av.avail_distribution(ModelParams(B, rho, 1.0, gamma), eta=1e-13).mean
                closed = cf.mean_available(B, rho, mode)
                worst = max(worst, abs(closed - mean) / max(abs(mean), 1e-300))
    return worst


def bounds_violations() -> int:
    """Count failed bracket, growth-in-B and growth-in-rho comparisons."""
    bad = 0
    rhos = np.round(np.arange(0.1, 3.01, 0.1), 10)
    for B in range(4, 65):
        prev = -1.0
        for rho in rhos:
            b = cf.bonferroni_bounds(B, float(rho))
            a = av.avail_distribution(ModelParams(B, float(rho), 1.0, "mu"), eta=1e-13).A
            bad += not (b.lower - 1e-12 <= a <= b.upper + 1e-12)
            bad += a < prev - 1e-12
            prev = a
    for rho in (1.6, 2.0, 3.0, 4.0):
        A = [av.avail_distribution(ModelParams(B, rho, 1.0, "mu"), eta=1e-13).A for B in range(4, 66)]
        bad += int(np.sum(np.diff(A) < -1e-12))
    return bad


def het_deviation(instances: int = 20, seed: int = 7) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        B = int(rng.integers(2, 13))
        M = int(rng.integers(4, 16))
        mu = rng.uniform(0.05, 0.5, size=B)
        params = ModelParams(B, float(rng.uniform(0.01, 0.3)), tuple(mu))
        worst = max(worst, _max_dev([(av.het_avail_fast(params, M).p, av.het_avail(params, M).p)]))
    for B in (4, 8, 12):
        params = ModelParams(B, 0.2, (0.15,) * B)
        ref = av.avail_distribution(ModelParams(B, 0.2, 0.15), eta=1e-13).p
        worst = max(worst, _max_dev([(av.het_avail_fast(params, eta=1e-13).p, ref)]))
    return worst


def coverage_deviation() -> float:
    """Largest relative miss of the exact coverage at A* = 0.999 from the
    reference values 20 (B = 10) and 29 (B = 1000)."""
    worst = 0.0
    for B, ref in ((10, 20.0), (1000, 29.0)):
        cov = cf.min_load(B, 0.999, cf.LoadMode.EXACT).coverage
        worst = max(worst, abs(cov - ref) / ref)
    return worst


def approx_exact_deviation() -> float:
    worst = 0.0
    for B in (16, 32, 64, 128, 256, 1000):
        for target in (0.99, 0.999, 0.9999):
            a = cf.min_load(B, target, cf.LoadMode.APPROX).rho
            e = cf.min_load(B, target, cf.LoadMode.EXACT).rho
            worst = max(worst, abs(a - e) / e)
    return worst


def mc_ctmc_deviation(horizon: float = 5e4, replications: int = 10, samples: int = 100_000):
    """Largest |z| of the CTMC mean against the analytic A, and whether the
    Monte Carlo 99% intervals covered it, at B = 8 and rho in {0.5, 1}."""
    worst_z = 0.0
    covered = True
    for i, rho in enumerate((0.5, 1.0)):
        params = ModelParams(8, rho, 1.0, "inf")
        A = av.avail_distribution(params, eta=1e-13).A
        lo, hi = mc_avail_dist(params, samples, seed=[11, i]).A_interval
        covered &= lo <= A <= hi
        summary = ctmc_replicate(params, horizon, [13, i], replications)
        worst_z = max(worst_z, abs(summary.mean - A) / summary.stderr)
    return worst_z, covered


def sim_deviations(replications: int = 10, horizon: float = 10_000.0, seed: int = 2024, jobs: int = 1):
    """Pooled simulated self-sustainability and the analytic value at the
    configured per-stage load, for 1, 4 and 8 arrivals per minute."""
    from .swarm import SimConfig, pool, run_replications

    out = []
    for per_min in (1, 4, 8):
        cfg = SimConfig(n_blocks=16, arrival_rate=per_min / 60.0, horizon_seconds=horizon)
        pooled = pool(run_replications(cfg, replications, seed, jobs))
        A = av.avail_distribution(ModelParams(16, cfg.arrival_rate, cfg.nominal_mu, "inf")).A
        out.append((per_min, pooled.self_sustainability, A))
    return out


def _timed(name: str, tol: float, fn: Callable[[], float], detail: str = "") -> Check:
    t0 = time.perf_counter()
    dev = fn()
    return Check(name, tol, dev, bool(dev <= tol), time.perf_counter() - t0, detail)


def run(level: str = "quick", jobs: int = 1, log=None) -> List[Check]:
    """Run the suite; ``log`` (if given) receives each check as it ends."""
    if level not in ("quick", "full"):
        raise ValueError("level must be 'quick' or 'full'")
    checks: List[Check] = []

    def add(check: Check):
        checks.append(check)
        if log is not None:
            log(check)

    psi_B = 256 if level == "full" else 64
    psi = {}

    def psi_part(i):
        if not psi:
            psi["v"] = psi_deviations(psi_B)
        return psi["v"][i]

    add(_timed("recursion vs lemma", 1e-10, recursion_equivalence))
    add(_timed("closed forms vs recursions", 1e-8, closed_form_deviation))
    add(_timed("d0 closed form vs mixing", 1e-7, d0_deviation))
    add(_timed(f"psi recursion vs formula B<={psi_B}", 1e-12, lambda: psi_part(0)))
    add(_timed("psi row sums", 1e-12, lambda: psi_part(1)))
    add(_timed("psi tail-sum identity", 1e-10, lambda: psi_part(2)))
    add(_timed("exact counting vs psi mixing", 1e-12, oracle_deviation))
    add(_timed("E[V] closed form (relative)", 1e-6, moment_deviation))
    add(_timed("bounds and monotonicity", 0, lambda: float(bounds_violations()), "count of violations"))
    add(_timed("heterogeneous fast vs naive", 1e-8, het_deviation))
    add(_timed("coverage at A*=0.999 (relative)", 0.15, coverage_deviation))
    add(_timed("approx vs exact min load", 0.20, approx_exact_deviation))
    if level == "full":
        t0 = time.perf_counter()
        z, covered = mc_ctmc_deviation()
        add(
            Check(
                "CTMC vs analytic (|z|)",
                3.0,
                z,
                bool(z <= 3.0 and covered),
                time.perf_counter() - t0,
                "MC interval covers A" if covered else "MC interval misses A",
            )
        )
        t0 = time.perf_counter()
        rows = sim_deviations(jobs=jobs)
        elapsed = time.perf_counter() - t0
        for per_min, sim, A in rows:
            add(
                Check(
                    f"simulation at {per_min}/min",
                    0.1,
                    abs(sim - A),
                    bool(abs(sim - A) <= 0.1),
                    elapsed / len(rows),
                    f"simulated={sim:.3f} analytic={A:.3f}",
                )
            )
    return checks
