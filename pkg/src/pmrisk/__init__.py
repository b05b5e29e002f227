"""pmrisk: copula-based portfolio risk engine for urban PM2.5 pollution."""

from .calibration import (
    ConcentrationSeries,
    CopulaFit,
    GhFit,
    LogRatioPanel,
    compute_log_ratios,
    empirical_correlation,
    fit_gh_marginal,
    fit_t_copula,
    split_train_holdout,
)
from .copula import (
    CityPortfolio,
    CopulaDraw,
    CopulaSpec,
    cholesky_factor,
    marginal_transform,
    portfolio_concentration,
    sample_copula,
    scaling_factor,
)
from .errors import (
    CalibrationError,
    DataError,
    DomainError,
    NumericError,
    PmriskError,
)
from .estimators import (
    EstimateResult,
    IsParams,
    StratificationScheme,
    aoa_allocate,
    calibrate_is,
    default_scheme,
    is_estimate,
    likelihood_ratio,
    naive_estimate,
    sis_estimate,
    stratified_sample,
)
from .ghdist import GhParams, gh_cdf, gh_logpdf, gh_moments, gh_pdf, gh_quantile
from .presets import load_model, model_hash, paper_portfolio, portfolio_to_doc
from .risk import (
    RiskQuery,
    RiskReport,
    RiskRow,
    build_report,
    compute_ccar,
    exceedance_curve,
    solve_car,
    variance_reduction_factor,
    weighted_quantile,
)
from .statkit import Rng, bessel_k, normal_cdf, normal_quantile, sample_gamma, t_cdf

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "CityPortfolio",
    "ConcentrationSeries",
    "CopulaDraw",
    "CopulaFit",
    "CopulaSpec",
    "DataError",
    "DomainError",
    "EstimateResult",
    "GhFit",
    "GhParams",
    "IsParams",
    "LogRatioPanel",
    "NumericError",
    "PmriskError",
    "RiskQuery",
    "RiskReport",
    "RiskRow",
    "Rng",
    "StratificationScheme",
    "aoa_allocate",
    "bessel_k",
    "build_report",
    "calibrate_is",
    "cholesky_factor",
    "default_scheme",
    "compute_ccar",
    "compute_log_ratios",
    "empirical_correlation",
    "exceedance_curve",
    "fit_gh_marginal",
    "fit_t_copula",
    "gh_cdf",
    "gh_logpdf",
    "gh_moments",
    "gh_pdf",
    "gh_quantile",
    "is_estimate",
    "likelihood_ratio",
    "load_model",
    "marginal_transform",
    "model_hash",
    "naive_estimate",
    "normal_cdf",
    "normal_quantile",
    "paper_portfolio",
    "portfolio_concentration",
    "portfolio_to_doc",
    "sample_copula",
    "sample_gamma",
    "scaling_factor",
    "sis_estimate",
    "solve_car",
    "split_train_holdout",
    "stratified_sample",
    "t_cdf",
    "variance_reduction_factor",
    "weighted_quantile",
]
