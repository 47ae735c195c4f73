"""Mixtures of exponential-distance models for clustering categorical
sequences under the Hamming distance."""

from .criteria import bic, count_params, dbs, wasw, wdbs
from .distance import (
    PrecisionStructure,
    enumerate_log_psi,
    hamming,
    log_psi_hamming,
    log_psi_weighted,
    pairwise_matrix,
    weighted_hamming,
)
from .ecm import (
    Control,
    EmptyComponentError,
    FittedModel,
    InadmissibleSpecError,
    ModelSpec,
    aitken_check,
    e_step,
    fit,
    init_noise,
    load_model,
)
from .edm import MODEL_TYPES, ComponentParams, edm_log_density
from .gating import GatingConfig, GatingParams, fit_mlr, predict_tau, two_step_regress
from .initialization import init_partition
from .selection import grid_search, stepwise
from .seqdata import (
    Alphabet,
    SchemaError,
    SequenceDataset,
    aggregate_duplicates,
    from_arrays,
    parse_csv,
    state_distribution,
    trim_time_range,
    transversal_entropy,
)
from .wlbs import wlbs_se

__version__ = "0.1.0"
