"""Deterministic federated-learning simulator with coalition-based
variance-reduction client selection and three selection baselines."""

from .coalition import (
    KernelConfig,
    Partition,
    SimilarityMatrix,
    adjusted_rand_index,
    homophily_matrix,
    kernel_matrix,
    kmeans,
    spectral_cluster,
)
from .config import ExperimentConfig, load_experiment_config, load_matrix_config
from .errors import (
    ConfigError,
    DegenerateDegree,
    InsufficientPool,
    NonFiniteLoss,
    SimulationError,
    SingularSubmatrix,
    ZeroDiagonal,
    ZeroVector,
)
from .policies import (
    PolicyConfig,
    SelectionDecision,
    boltzmann_probs,
    select_active_fl,
    select_fedcvr,
    select_power_of_choice,
    select_uniform,
)
from .runtime import (
    ClientState,
    CovarianceConfig,
    ExperimentResult,
    RoundMetrics,
    ServerState,
    TrainerConfig,
    aggregate,
    local_train,
    run_experiment,
    run_round,
    track_subset,
)
from .stats import (
    AggregationWeights,
    CovarianceStack,
    GammaSchedule,
    ValueVector,
    conditional_coeffs,
    conditional_mean_update,
    pearson,
    robbins_monro_update,
    total_value,
    value_vector_component,
    variance_reduction_subset,
)
from .tasks import (
    ClientDataset,
    SyntheticClassificationConfig,
    SyntheticRegressionConfig,
    generate_synthetic_classification,
    generate_synthetic_regression,
    load_datasets,
    logistic_loss_and_grad,
    regression_loss_and_grad,
    save_datasets,
)

__version__ = "0.1.0"
