"""Exact asymptotic biases of IV and OLS under treatment-induced selection.

Linear, homogeneous, Gaussian structural equation models with standardized
variables; selection on a descendant of treatment either by covariate
adjustment or by one-sided sample truncation ``S >= s0``.
"""
from .errors import (
    DegenerateEstimandError,
    InfeasibleModelError,
    IvselError,
    ModelSpecError,
    ScenarioMismatchError,
)
from .estimands import (
    EstimandReport,
    SelectionRule,
    bounds_interval,
    closed_form,
    closed_form_baseline,
    closed_form_confounded_mediator,
    closed_form_mediator,
    closed_form_treatment_confounder,
    plim_matrix,
    preference_margin,
    treatment_confounder_discrepancy,
)
from .mc_oracle import apply_selection, convergence_report, estimate, simulate, verify
from .sem_core import (
    PRESETS,
    CovarianceStructure,
    PathModel,
    build_model,
    conditional_cov,
    implied_covariance,
    load_model,
    solve_shock_variances,
    wright_marginal_cov,
)
from .sensitivity import Axis, SweepGrid, classify_least_biased, psi_curve, run_sweep
from .trunc_normal import (
    TruncationSpec,
    hazard,
    normal_cdf,
    normal_inv_cdf,
    normal_pdf,
    psi,
    severity_to_threshold,
    tallis_truncated_moments,
    threshold_to_severity,
)

__version__ = "0.1.0"
