"""Protocol-level swarm simulator and its trace metrics."""

from .analysis import (
    BlockTimeStat,
    SimMetrics,
    UniformityResult,
    block_time_stats,
    coefficient_of_variation,
    metrics_from_trace,
    ownership_uniformity,
    replica_stats,
    run_swarm,
    time_averages,
    unfinished_peers,
    uniformity_pvalue,
)
from .campaign import PooledMetrics, pool, replication_seed, run_replications
from .config import SimConfig, load_config
from .sim import PUBLISHER, SwarmSimulator, simulate
from .trace import Trace

__all__ = [
    "BlockTimeStat",
    "PUBLISHER",
    "PooledMetrics",
    "SimConfig",
    "SimMetrics",
    "SwarmSimulator",
    "Trace",
    "UniformityResult",
    "block_time_stats",
    "coefficient_of_variation",
    "load_config",
    "metrics_from_trace",
    "ownership_uniformity",
    "pool",
    "replica_stats",
    "replication_seed",
    "run_replications",
    "run_swarm",
    "simulate",
    "time_averages",
    "unfinished_peers",
    "uniformity_pvalue",
]
