"""Metrics computed from simulator event traces.

Everything here replays a :class:`~.trace.Trace`, so a trace written to disk
and read back yields the same metrics as the live run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import stats

from ..params import make_rng, substream
from .config import SimConfig
from .sim import simulate
from .trace import BLOCK_COMPLETE, DEPART, JOIN, SAMPLE, Trace


def _bits(mask: int, B: int) -> List[int]:
    return [b for b in range(B) if mask >> b & 1]


def _replay(trace: Trace, on_interval=None, on_record=None) -> None:
    """Walk the records keeping per-block replica counts among peers.

    ``on_interval(t0, t1, counts, n_peers)`` sees every stretch of constant
    state inside ``[warmup, horizon]``; ``on_record(rec, counts, peers)``
    sees each record after it has been applied.
    """
    B = trace.n_blocks
    counts = np.zeros(B, dtype=np.int64)
    peers: Dict[int, int] = {}
    t_prev = trace.warmup
    for rec in trace.records:
        t, event, pid, block, sig = rec
        if on_interval is not None and t > t_prev:
            on_interval(t_prev, min(t, trace.horizon), counts, len(peers))
            t_prev = t
        if event == JOIN:
            peers[pid] = 0
        elif event == BLOCK_COMPLETE:
            counts[block] += 1
            peers[pid] = int(sig, 16)
        elif event == DEPART:
            for b in _bits(peers.pop(pid), B):
                counts[b] -= 1
        if on_record is not None:
            on_record(rec, counts, peers)
    if on_interval is not None and trace.horizon > t_prev:
        on_interval(t_prev, trace.horizon, counts, len(peers))


def _window(trace: Trace) -> float:
    return max(trace.horizon - trace.warmup, 0.0)


def time_averages(trace: Trace) -> Tuple[float, float, np.ndarray]:
    """Time-averaged self-sustainability, peer count and per-block replica
    count among peers (publisher excluded) after the warm-up."""
    acc = {"A": 0.0, "peers": 0.0}
    rep = np.zeros(trace.n_blocks)

    def step(t0, t1, counts, n):
        dt = t1 - t0
        if dt <= 0:
            return
        if counts.min() > 0:
            acc["A"] += dt
        acc["peers"] += n * dt
        rep[:] += counts * dt

    _replay(trace, on_interval=step)
    span = _window(trace)
    if span == 0:
        return 0.0, 0.0, rep
    return acc["A"] / span, acc["peers"] / span, rep / span


def coefficient_of_variation(replicas: np.ndarray) -> float:
    """Population standard deviation over mean of per-block replica counts."""
    m = float(np.mean(replicas))
    if m == 0:
        return 0.0
    return float(np.sqrt(np.mean((replicas - m) ** 2)) / m)


def replica_stats(trace: Trace) -> Tuple[np.ndarray, np.ndarray]:
    """Per-block time-averaged replicas including the publisher's copy, and
    the c_t series at post-warm-up SAMPLE instants over the same counts."""
    if not trace.records:
        return np.zeros(0), np.zeros(0)
    _, _, rep = time_averages(trace)
    cvs: List[float] = []

    def on_record(rec, counts, peers):
        if rec[1] == SAMPLE and rec[0] >= trace.warmup:
            cvs.append(coefficient_of_variation(counts + 1))

    _replay(trace, on_record=on_record)
    return rep + 1.0, np.asarray(cvs)


@dataclass(frozen=True)
class BlockTimeStat:
    count: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    mean: float


def block_time_samples(trace: Trace) -> Dict[int, np.ndarray]:
    """Time to fetch the h-th block (h = 1 counted from the join) for every
    peer that joined after the warm-up, keyed by h."""
    last: Dict[int, Tuple[float, int]] = {}
    samples: Dict[int, List[float]] = {}
    for t, event, pid, _, _ in trace.records:
        if event == JOIN:
            if t >= trace.warmup:
                last[pid] = (t, 0)
        elif event == BLOCK_COMPLETE and pid in last:
            t0, h = last[pid]
            samples.setdefault(h + 1, []).append(t - t0)
            last[pid] = (t, h + 1)
        elif event == DEPART:
            last.pop(pid, None)
    return {h: np.asarray(samples[h]) for h in sorted(samples)}


def summarize_block_times(samples: Dict[int, np.ndarray]) -> Dict[int, BlockTimeStat]:
    out = {}
    for h in sorted(samples):
        x = np.asarray(samples[h], dtype=float)
        if x.size == 0:
            continue
        q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
        out[h] = BlockTimeStat(
            count=int(x.size),
            minimum=float(x.min()),
            q1=float(q1),
            median=float(med),
            q3=float(q3),
            maximum=float(x.max()),
            mean=float(x.mean()),
        )
    return out


def block_time_stats(trace: Trace) -> Dict[int, BlockTimeStat]:
    """Quartiles, extremes and mean of the per-index download times."""
    return summarize_block_times(block_time_samples(trace))


@dataclass
class UniformityResult:
    first_block_hist: np.ndarray
    last_block_hist: np.ndarray
    first_pair_hist: np.ndarray
    first_block_p: float
    last_block_p: float
    first_pair_p: float


def pair_index(a: int, b: int, B: int) -> int:
    """Position of the unordered pair ``{a, b}`` in lexicographic order."""
    a, b = min(a, b), max(a, b)
    return a * B - a * (a + 1) // 2 + (b - a - 1)


def ownership_samples(trace: Trace, sample_period_seconds: float = 500.0, seed=0):
    """Every ``sample_period_seconds`` after warm-up, draw a random peer
    holding a block (record the first block it got), a random peer holding
    two blocks (its first pair) and a random peer missing one block (that
    block); return the three histograms."""
    B = trace.n_blocks
    full = (1 << B) - 1
    rng = make_rng(seed)
    first = np.zeros(B, dtype=np.int64)
    last = np.zeros(B, dtype=np.int64)
    pairs = np.zeros(B * (B - 1) // 2, dtype=np.int64)
    have: Dict[int, int] = {}
    order: Dict[int, List[int]] = {}

    def pick(pool):
        return pool[rng.integers(len(pool))] if pool else None

    def draw():
        pids = sorted(have)
        p = pick([x for x in pids if order[x]])
        if p is not None:
            first[order[p][0]] += 1
        p = pick([x for x in pids if len(order[x]) >= 2])
        if p is not None and B > 1:
            pairs[pair_index(order[p][0], order[p][1], B)] += 1
        p = pick([x for x in pids if len(order[x]) == B - 1])
        if p is not None and B > 1:
            last[_bits(~have[p] & full, B)[0]] += 1

    # a draw at time s sees every record with timestamp <= s
    nxt = trace.warmup + sample_period_seconds
    for t, event, pid, block, sig in trace.records:
        while t > nxt and nxt <= trace.horizon:
            draw()
            nxt += sample_period_seconds
        if event == JOIN:
            have[pid] = 0
            order[pid] = []
        elif event == BLOCK_COMPLETE:
            have[pid] = int(sig, 16)
            order[pid].append(block)
        elif event == DEPART:
            have.pop(pid, None)
            order.pop(pid, None)
    while nxt <= trace.horizon:
        draw()
        nxt += sample_period_seconds
    return first, last, pairs


def uniformity_pvalue(hist: np.ndarray, seed=0, n_mc: int = 20000, min_expected: float = 5.0) -> float:
    """Chi-square test of a histogram against the uniform law.

    With fewer than ``min_expected`` expected counts per cell the asymptotic
    law is poor, so the p-value is then estimated by sampling multinomials.
    """
    hist = np.asarray(hist, dtype=np.int64)
    n = int(hist.sum())
    k = len(hist)
    if n == 0 or k < 2:
        return 1.0
    expected = n / k
    stat = float(((hist - expected) ** 2).sum() / expected)
    if expected >= min_expected:
        return float(stats.chi2.sf(stat, k - 1))
    rng = make_rng(seed)
    sims = rng.multinomial(n, np.full(k, 1.0 / k), size=n_mc)
    sim_stats = ((sims - expected) ** 2).sum(axis=1) / expected
    return float((1 + np.count_nonzero(sim_stats >= stat - 1e-9)) / (n_mc + 1))


def ownership_uniformity(trace: Trace, sample_period_seconds: float = 500.0, seed=0) -> UniformityResult:
    first, last, pairs = ownership_samples(trace, sample_period_seconds, substream(seed, 1))
    return uniformity_from_hists(first, last, pairs, substream(seed, 2))


def uniformity_from_hists(first, last, pairs, seed=0) -> UniformityResult:
    ss = [substream(seed, k) for k in range(3)]
    return UniformityResult(
        first_block_hist=np.asarray(first),
        last_block_hist=np.asarray(last),
        first_pair_hist=np.asarray(pairs),
        first_block_p=uniformity_pvalue(first, ss[0]),
        last_block_p=uniformity_pvalue(last, ss[1]),
        first_pair_p=uniformity_pvalue(pairs, ss[2]),
    )


def unfinished_peers(trace: Trace, slack: float) -> List[int]:
    """Peers that joined at least ``slack`` seconds before the horizon and
    never received their last block."""
    joined: Dict[int, float] = {}
    done = set()
    for t, event, pid, _, sig in trace.records:
        if event == JOIN:
            joined[pid] = t
        elif event == BLOCK_COMPLETE and int(sig, 16) == (1 << trace.n_blocks) - 1:
            done.add(pid)
    return sorted(p for p, t in joined.items() if t <= trace.horizon - slack and p not in done)


@dataclass
class SimMetrics:
    """Post-warm-up metrics of one replication.

    ``replica_mean`` counts the publisher's copy, ``replica_mean_peers_only``
    does not.
    """

    n_blocks: int
    horizon: float
    warmup: float
    self_sustainability: float
    mean_peers: float
    replica_mean: np.ndarray
    replica_mean_peers_only: np.ndarray
    cv_series: np.ndarray
    block_time_samples: Dict[int, np.ndarray] = field(repr=False)
    first_block_hist: np.ndarray
    last_block_hist: np.ndarray
    first_pair_hist: np.ndarray
    trace: Optional[Trace] = field(default=None, repr=False)

    @property
    def block_download_time_quartiles(self) -> Dict[int, BlockTimeStat]:
        return summarize_block_times(self.block_time_samples)

    def summary(self) -> dict:
        """Scalar digest used for tables."""
        return {
            "self_sustainability": self.self_sustainability,
            "mean_peers": self.mean_peers,
            "replica_mean": float(np.mean(self.replica_mean)) if self.replica_mean.size else math.nan,
            "cv_median": float(np.median(self.cv_series)) if self.cv_series.size else math.nan,
            "first_samples": int(self.first_block_hist.sum()),
            "last_samples": int(self.last_block_hist.sum()),
        }


def metrics_from_trace(trace: Trace, seed=0) -> SimMetrics:
    A, peers, rep = time_averages(trace)
    rep_incl, cvs = replica_stats(trace)
    if not trace.records:
        rep = np.zeros(0)
    first, last, pairs = ownership_samples(trace, seed=substream(seed, 1))
    return SimMetrics(
        n_blocks=trace.n_blocks,
        horizon=trace.horizon,
        warmup=trace.warmup,
        self_sustainability=A,
        mean_peers=peers,
        replica_mean=rep_incl,
        replica_mean_peers_only=rep,
        cv_series=cvs,
        block_time_samples=block_time_samples(trace),
        first_block_hist=first,
        last_block_hist=last,
        first_pair_hist=pairs,
    )


def run_swarm(config: SimConfig, *, keep_trace: bool = False, audit: bool = False, seed=None) -> SimMetrics:
    """Simulate one replication and reduce its trace to metrics; ``seed``
    overrides ``config.rng_seed``."""
    trace = simulate(config, audit=audit, seed=seed)
    metrics = metrics_from_trace(trace, seed=config.rng_seed if seed is None else seed)
    if keep_trace:
        metrics.trace = trace
    return metrics
