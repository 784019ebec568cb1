"""Self-sustainability of peer-to-peer swarms: the probability that peers,
without the publisher, collectively hold every block of a file."""

from .availability import (
    AvailDist,
    CondAvailTable,
    PsiKernel,
    avail_distribution,
    cond_avail_fast,
    cond_avail_fast_seeded,
    cond_avail_lemma,
    het_avail,
    het_avail_fast,
    mix,
    psi_direct,
    psi_matrix,
    psi_recursive,
    psi_tail_sum,
    stage_avail_dist,
)
from .closed_form import (
    B_STABLE,
    BonferroniBounds,
    LoadMode,
    MinLoad,
    TaggedBlockProb,
    block_unavail_prob,
    bonferroni_bounds,
    cond_avail_closed_inf,
    cond_avail_closed_seeded,
    mean_available,
    min_load,
    seeded_from_inf,
    self_sust_closed_seeded,
    tagged_unavail_prob,
)
from .errors import (
    CapabilityError,
    NumericalCheckError,
    PrecisionError,
    TraceIOError,
    ValidationError,
)
from .oracle import (
    CtmcMetrics,
    CtmcState,
    MCEstimate,
    Signature,
    StageVector,
    ctmc_replicate,
    ctmc_simulate,
    enumerate_cond_dist,
    exact_all_available,
    mc_avail_dist,
)
from .params import (
    DEFAULT_ETA,
    EQUAL_MU,
    INFINITE,
    GammaMode,
    LoadProfile,
    ModelParams,
    choose_truncation,
    poisson_pmf,
    poisson_tail,
    validate,
)

__version__ = "0.1.0"
