"""User-level differentially private mean estimation for heterogeneous users.

Users hold different numbers of Bernoulli samples drawn with per-user rates
that are themselves random around a population mean.  The estimators here
combine capped inverse-variance weighting, concentration-based clamping, and
Laplace noise to estimate the population mean under user-level differential
privacy, with or without public sample counts.
"""

from .core import (
    Constant,
    Explicit,
    HeavyTail,
    MetaKind,
    PointMass,
    Population,
    PowerLaw,
    PrivacyBudget,
    TruncatedGaussian,
    TwoPoint,
    UserRecord,
    generate_population,
    read_population,
    user_mean,
    variance_of_dk,
    write_population,
)
from .concentration import (
    ConcentrationQuery,
    binomial_tail_radius,
    meta_tail_radius,
    truncation_interval,
    user_tail_radius,
)
from .mechanisms import (
    GeometricBins,
    IntervalBins,
    NeighbourRelation,
    PtrOutcome,
    SensitivityBound,
    SensitivityKind,
    dp_histogram,
    laplace_mechanism,
    private_order_statistic,
    propose_test_release,
)
from .initial import (
    InitialMeanResult,
    InitialVarianceResult,
    VarianceEstimatorConfig,
    dp_mean_initial,
    dp_variance_initial,
)
from .estimators import (
    EstimateReport,
    EstimatorConfig,
    WeightPlan,
    estimate_ideal_private,
    estimate_nonprivate,
    estimate_public_k,
    ideal_weights,
    optimize_threshold,
    threshold_objective,
)
from .private_k import (
    PtrCertificate,
    TruncatedCoreParams,
    certify_kappa,
    estimate_private_k,
    truncated_weighted_mean,
)
from .analysis import (
    LowerBound,
    VariancePrediction,
    constant_mean_variance,
    median_truncation_baseline,
    minimax_lower_bound,
    optimal_sample_cap,
)
from .harness import (
    ExperimentConfig,
    TrialSummary,
    compare_estimators,
    run_experiment,
)
from .rng import RandomSource

__version__ = "0.1.0"
