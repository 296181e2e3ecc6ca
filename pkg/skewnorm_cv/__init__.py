# skewnorm_cv
# Kreuzvalidierte penalisierte ML-Schätzung (CV-MPLE) der schiefen Normalverteilung.

__version__ = "1.0.0"

from .dist_core import (
    GAMMA1_BOUND, ModelMoments, Params, ShapeMap, delta_to_gamma1, gamma1_to_delta,
    log_ndtr, model_moments, sample, shape_to_theta, sn_logpdf, sn_pdf, theta_to_shape,
)
from .errors import (
    DegenerateSampleError, DomainError, EmptyInputError, FoldFitError, InsufficientDataError,
    InvalidInputError, NumericalFailureError, SeriesParseError, SkewNormError,
)
from .estimation import (
    C1Report, GradVector, InitialEstimate, PenaltyKind, PenaltySpec, check_c1,
    fisher_info_symmetry, grad_loglik, half_normal_limit, loglik, mills_ratio, mom_init,
    penalized_loglik, penalty_eval,
)
from .pem import FitResult, PemOptions, TraceRow, e_objective, mle_fit, mple_fit, pem_fit, q_mple_fit
from .cv import CVTrace, FoldPlan, cv_average_error, cv_fit, lambda_grid, lambda_r, make_folds, select_lambda
from .sim import (
    Law, SimConfig, SimRecord, load_config, preset, read_records, run_setting1, run_setting2, scale_config,
    summarize, write_records, write_summary,
)
from .pipeline import (
    ClusterReport, SeriesTable, cluster_fits, cluster_profiles, fit_all, kmeans, load_series,
    skew_count, write_long,
)
