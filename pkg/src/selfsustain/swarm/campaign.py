"""Independent replications and their pooled metrics."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from ..errors import ValidationError
from ..params import substream
from .analysis import (
    BlockTimeStat,
    SimMetrics,
    UniformityResult,
    run_swarm,
    summarize_block_times,
    uniformity_from_hists,
)
from .config import SimConfig


def replication_seed(seed: int, r: int) -> np.random.SeedSequence:
    """Substream of replication ``r`` (counted from 1) under campaign ``seed``."""
    return np.random.SeedSequence([seed, r])


def _one(args) -> SimMetrics:
    config, seed, r = args
    return run_swarm(config, seed=replication_seed(seed, r))


def run_replications(config: SimConfig, replications: int, seed: int, jobs: int = 1) -> List[SimMetrics]:
    """Replications 1..R in order; ``jobs > 1`` runs them in worker processes."""
    if replications < 1:
        raise ValidationError("replications must be >= 1")
    if jobs < 1:
        raise ValidationError("jobs must be >= 1")
    work = [(config, seed, r) for r in range(1, replications + 1)]
    if jobs == 1 or replications == 1:
        return [_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=min(jobs, replications)) as pool:
        return list(pool.map(_one, work))


@dataclass
class PooledMetrics:
    replications: int
    self_sustainability: float
    stderr: float
    mean_peers: float
    replica_mean: np.ndarray
    cv_series: np.ndarray
    block_download_time_quartiles: Dict[int, BlockTimeStat]
    uniformity: UniformityResult

    def summary(self) -> dict:
        return {
            "self_sustainability": self.self_sustainability,
            "stderr": self.stderr,
            "mean_peers": self.mean_peers,
            "replica_mean": float(np.mean(self.replica_mean)) if self.replica_mean.size else math.nan,
            "cv_below_0.8": float(np.mean(self.cv_series < 0.8)) if self.cv_series.size else math.nan,
            "first_block_p": self.uniformity.first_block_p,
            "last_block_p": self.uniformity.last_block_p,
            "first_pair_p": self.uniformity.first_pair_p,
        }


def pool(runs: Sequence[SimMetrics], seed=0) -> PooledMetrics:
    """Average the scalar metrics, concatenate the series and add up the
    histograms before testing them for uniformity."""
    if not runs:
        raise ValidationError("nothing to pool")
    A = np.array([m.self_sustainability for m in runs])
    stderr = float(A.std(ddof=1) / math.sqrt(len(A))) if len(A) > 1 else math.nan
    times: Dict[int, list] = {}
    for m in runs:
        for h, x in m.block_time_samples.items():
            times.setdefault(h, []).append(x)
    times = {h: np.concatenate(xs) for h, xs in times.items()}
    return PooledMetrics(
        replications=len(runs),
        self_sustainability=float(A.mean()),
        stderr=stderr,
        mean_peers=float(np.mean([m.mean_peers for m in runs])),
        replica_mean=np.mean([m.replica_mean for m in runs], axis=0),
        cv_series=np.concatenate([m.cv_series for m in runs]),
        block_download_time_quartiles=summarize_block_times(times),
        uniformity=uniformity_from_hists(
            sum(m.first_block_hist for m in runs),
            sum(m.last_block_hist for m in runs),
            sum(m.first_pair_hist for m in runs),
            substream(seed, 9),
        ),
    )
