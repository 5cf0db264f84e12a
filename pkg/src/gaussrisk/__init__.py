"""Asymptotic approximations and Monte-Carlo checks for Gaussian risk measures."""

__version__ = "0.1.0"

from .approx import (
    ApproxResult,
    CovSpec,
    bivariate_regime,
    mcte,
    mes_bivariate,
    mes_multivariate,
    mme_bivariate,
    mme_multivariate,
    standardize_query,
    trivariate_case_i,
)
from .errors import (
    AmbiguousActiveSet,
    ConfigError,
    DimensionMismatch,
    DomainError,
    EmptyIndexSet,
    EnumerationOverflow,
    GaussRiskError,
    NoPositiveComponent,
    NotPositiveDefinite,
    OverlappingSets,
    RegimeMismatch,
    TooFewAcceptedSamples,
)
from .oracle import (
    McEstimate,
    RngStream,
    estimate_conditional_mes,
    estimate_conditional_mme,
    estimate_mcte,
    estimate_mes,
    estimate_mme,
    estimate_survival,
    exp_limit_check,
    sample_mvn,
)
from .qp import QpSolution, savage_condition, solve_pi, verify_kkt
from .tail import (
    expected_positive_part,
    gaussian_orthant,
    limit_law,
    limit_law_moments,
    mvn_tail_asymptotic,
    std_cdf,
    std_quantile,
)
