"""spectrisk: exact generalization-error curves for analytic spectral
algorithms in kernel regression, verified at desk scale."""

from .spectrum import (
    EigenSystem,
    SourceFunction,
    make_torus_system,
    make_sphere_system,
    make_powerlaw_system,
    kernel_eval,
    make_source,
    interp_norm_sq,
)
from .filters import FilterSpec, make_filter, audit_real_axis
from .funcalc import (
    ContourPath,
    build_contour,
    audit_analytic_conditions,
    matrix_filter_eig,
    matrix_filter_contour,
)
from .theory import (
    bias_main_term,
    phi_effective_dim,
    counting_function,
    predicted_risk,
    minimax_rate,
    theory_curve,
    effective_dim_sandwich,
    residual_lower_bound,
    fit_loglog,
    TruncationBudgetError,
)
from .empirical import (
    SampleDesign,
    GramPack,
    RiskBreakdown,
    sample_design,
    build_gram,
    replace_source,
    exact_conditional_risk,
    conditional_risk_mc,
    variance_monotonicity_probe,
    interpolating_probe,
)
from .harness import ExperimentConfig, run, report_diff

__version__ = "0.1.0"
