"""distillab: a desk-scale laboratory for dataset-distillation laws.

Measures and models, training configurations with preconditioned update
dynamics, configuration distance and greedy covers, matching surrogates
(distribution / gradient / trajectory) in one bi-level engine, bridge
bounds on the matching discrepancy, and the two law-verification
harnesses (budget scaling and configuration coverage).
"""

from .configspace import (
    FULL_BATCH,
    Configuration,
    CoverReport,
    DynamicsDiagnostics,
    Trajectory,
    config_distance,
    dynamics_diagnostics,
    family_distance_matrix,
    greedy_cover,
    make_probes,
    quantile_radius,
    step,
    train,
)
from .discrepancy import (
    BridgeReport,
    ExchangeabilityReport,
    bridge_bounds,
    exchangeability_check,
    matching_discrepancy,
)
from .distill import DistillRun, distill, init_synthetic
from .errors import (
    BadMagic,
    BadMatrix,
    BadShape,
    ConfigError,
    DegenerateFit,
    DimMismatch,
    DistillabError,
    EmptyPart,
    InfeasibleTarget,
    InsufficientClassPoints,
    MissingClass,
    NonFiniteGradient,
    NonFiniteProbe,
    TruncatedFile,
    ZeroGap,
)
from .lawlab import (
    CoveragePoint,
    GapRecord,
    RealBaseline,
    coverage_experiment,
    evaluate_gap,
    kmin_estimate,
    scaling_experiment,
    train_real_baseline,
)
from .measures import (
    WeightedDataset,
    from_arrays,
    load_idx,
    make_gaussian_mixture,
    split,
)
from .models import (
    ModelOps,
    ModelSpec,
    accuracy,
    dataset_mean_grad,
    estimate_lipschitz,
    grad,
    init_params,
    loss,
    mean_grad,
    predict_logits,
    register_model_kind,
    risk,
)
from .numkit import LawFit, RngStream, central_diff_grad, ols_fit
from .surrogates import (
    SurrogateTrace,
    SyntheticSet,
    build_context,
    context_objective,
    fit_contraction,
    gm_objective,
    median_heuristic_sigma,
    mmd,
    mmd_grad_atoms,
    outer_step,
    sliced_w1,
    tm_objective,
)
from .updates import (
    CoordFlip,
    DiagAdaptive,
    GaussianNoise,
    Identity,
    NoAugment,
    Scaled,
    apply_update,
    augment_features,
    field_apply,
    norm_bound,
)

__version__ = "0.1.0"
