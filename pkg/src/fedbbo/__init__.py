"""fedbbo: collaborative black-box optimization with privacy-respecting sharing.

K agents run Bayesian-optimization loops over private trial data and
collaborate by exchanging only designs, densities, sampled surrogate
weights, or hyperparameters.  Three interchangeable federation styles are
provided: consensus-mixed global decisions, locally conditioned decisions,
and federated surrogate learning.
"""

from .acquisition import (
    AcquisitionResult,
    Utility,
    confidence_bound,
    eta_default,
    expected_improvement,
    maximize_acquisition,
    mc_expected_utility,
)
from .benchmarks import BlackBoxFamily, FamilySpec, RegretTrace, evaluate, make_family
from .conditioned import (
    ConditionedSurrogate,
    SharedDensity,
    SharedDesign,
    SharedDesignSet,
    TrustedComparator,
    build_shared_set,
    condition_by_rejection,
    density_weighted_decision,
    local_decision_conditioned,
    thompson_density,
)
from .consensus import (
    ConsensusMatrix,
    WSchedule,
    candidate_step,
    consensus_mix,
    consensus_round,
    uniform_consensus,
    w_update_linear,
)
from .domain import Dataset, Domain, latin_hypercube
from .fed_gp import FedConfig, FedTrace, fed_round, local_update, personalize, run_federated_fit
from .gp import (
    GPFitError,
    GPHyperparams,
    GPPosterior,
    gp_fit,
    gp_log_marginal_likelihood,
    gp_predict,
    gp_sample_joint,
    kernel_eval,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    RunRecord,
    config_from_dict,
    load_config,
    load_record,
    replay,
    run_experiment,
)
from .rff import BlrPosterior, RffFeatureMap, blr_fit, blr_sample_weights, rff_build, rff_features
from .rff_sharing import DpConfig, MixSchedule, WeightMessage, dp_average, mix_schedule_eval, ts_decision
from .rng import substream

__version__ = "0.1.0"
