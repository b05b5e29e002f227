"""Dependence sampling and the map from copula variates to concentration.

The portfolio model: a normal or t copula drives D dependent uniforms, each
pushed through its city's GH quantile and scaled, and the next-day overall
concentration is the weighted sum of PM0_d * exp(r_d).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import CalibrationError, DomainError
from .ghdist import GhParams, build_tables, gh_moments, _tables
from .statkit import Rng, normal_cdf, t_cdf

# Uniforms are clamped before the GH quantile: IS pushes V deep into the
# tails where F(V) rounds to exactly 0 or 1 in float64.
_UNIFORM_CLIP = 1e-15


def cholesky_factor(sigma) -> np.ndarray:
    """Lower-triangular L with L L' = sigma; reports the failing pivot."""
    mat = np.asarray(sigma, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DomainError("correlation matrix must be square")
    if not np.all(np.isfinite(mat)):
        raise DomainError("correlation matrix must be finite")
    if not np.allclose(mat, mat.T, atol=1e-12, rtol=0.0):
        raise DomainError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(mat), 1.0, atol=1e-12, rtol=0.0):
        raise DomainError("correlation matrix must have a unit diagonal")
    d = mat.shape[0]
    lower = np.zeros_like(mat)
    for j in range(d):
        pivot = mat[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot <= 0.0:
            raise CalibrationError(
                f"matrix is not positive definite: pivot {j} is {pivot:.3e}"
            )
        lower[j, j] = np.sqrt(pivot)
        if j + 1 < d:
            lower[j + 1 :, j] = (mat[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


@dataclass(frozen=True, eq=False)
class CopulaSpec:
    """Dependence family: 'normal' or 't' with correlation sigma (and nu for t)."""

    family: str
    sigma: np.ndarray
    nu: float | None = None

    def __post_init__(self):
        if self.family not in ("normal", "t"):
            raise DomainError(f"unknown copula family {self.family!r}")
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        off = self.sigma[~np.eye(self.sigma.shape[0], dtype=bool)]
        if off.size and (np.any(off <= -1.0) or np.any(off >= 1.0)):
            raise DomainError("off-diagonal correlations must lie in (-1, 1)")
        cholesky_factor(self.sigma)  # symmetry, unit diagonal, PD
        if self.family == "t":
            if self.nu is None or not np.isfinite(self.nu) or self.nu <= 0.0:
                raise DomainError("t copula requires nu > 0")

    @property
    def dimension(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True, eq=False)
class CityPortfolio:
    """Weighted city portfolio with per-city marginals and a shared copula.

    Weights are population shares and are used as given; the engine never
    renormalizes them.
    """

    names: tuple[str, ...]
    weights: np.ndarray
    pm0: np.ndarray
    scale: np.ndarray
    marginals: tuple[GhParams, ...]
    copula: CopulaSpec

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "pm0", np.asarray(self.pm0, dtype=float))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))
        d = len(self.names)
        for arr, label in ((self.weights, "weights"), (self.pm0, "pm0"), (self.scale, "scale")):
            if arr.shape != (d,):
                raise DomainError(f"{label} must have one entry per city")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{label} must be finite")
        if np.any(self.weights < 0.0) or not np.any(self.weights > 0.0):
            raise DomainError("weights must be nonnegative with at least one positive")
        if np.any(self.pm0 <= 0.0):
            raise DomainError("initial concentrations must be positive")
        if np.any(self.scale <= 0.0):
            raise DomainError("scaling factors must be positive")
        if len(self.marginals) != d:
            raise DomainError("need one marginal law per city")
        if self.copula.dimension != d:
            raise DomainError(
                f"copula dimension {self.copula.dimension} != city count {d}"
            )
        for m in self.marginals:
            build_tables(m)  # eager cache construction at portfolio load

    @property
    def dimension(self) -> int:
        return len(self.names)

    @cached_property
    def chol(self) -> np.ndarray:
        return cholesky_factor(self.copula.sigma)

    def baseline(self) -> float:
        """Current overall concentration (all log-ratios at zero)."""
        return float(self.weights @ self.pm0)


@dataclass(frozen=True, eq=False)
class CopulaDraw:
    """Batch of copula draws.

    ``z`` is the normal matrix fed to the correlation factor (already
    mean-shifted when drawn under an IS density), ``y`` the chi-square mixing
    draws (t family only), ``v`` the dependent variates L z / sqrt(y/nu).
    """

    z: np.ndarray
    y: np.ndarray | None
    v: np.ndarray

    @property
    def n(self) -> int:
        return self.z.shape[0]


def dependent_vector(spec: CopulaSpec, chol: np.ndarray, z: np.ndarray,
                     y: np.ndarray | None) -> np.ndarray:
    corr = z @ chol.T
    if spec.family == "normal":
        return corr
    return corr / np.sqrt(y / spec.nu)[:, None]


def sample_copula(spec: CopulaSpec, chol: np.ndarray, rng: Rng, n: int = 1) -> CopulaDraw:
    """Draw n dependent variates; each V_d is marginally t_nu (or N(0,1))."""
    if n < 1:
        raise DomainError("n must be at least 1")
    g = rng.generator()
    z = g.standard_normal((n, spec.dimension))
    y = None
    if spec.family == "t":
        y = 2.0 * g.standard_gamma(spec.nu / 2.0, size=n)
    return CopulaDraw(z=z, y=y, v=dependent_vector(spec, chol, z, y))


def copula_uniforms(spec: CopulaSpec, v: np.ndarray) -> np.ndarray:
    """Map dependent variates to clamped uniforms via the driving CDF F."""
    if spec.family == "t":
        u = t_cdf(v, spec.nu)
    else:
        u = normal_cdf(v)
    return np.clip(u, _UNIFORM_CLIP, 1.0 - _UNIFORM_CLIP)


def marginal_transform(portfolio: CityPortfolio, draw: CopulaDraw) -> np.ndarray:
    """Log-ratio matrix r with r_d = s_d * G_d^{-1}(F(V_d))."""
    u = copula_uniforms(portfolio.copula, draw.v)
    r = np.empty_like(u)
    for d, marginal in enumerate(portfolio.marginals):
        r[:, d] = _tables(marginal).quantile(u[:, d])
    return r * portfolio.scale[None, :]


def portfolio_concentration(portfolio: CityPortfolio, r: np.ndarray) -> np.ndarray:
    """Overall next-day concentration C = sum_d w_d PM0_d exp(r_d)."""
    r = np.asarray(r, dtype=float)
    contrib = portfolio.weights * portfolio.pm0
    if r.ndim == 1:
        return float(np.exp(r) @ contrib)
    return np.exp(r) @ contrib


def scaling_factor(sigma_d: float, marginal: GhParams) -> float:
    """s_d = sigma_d / sqrt(var of the marginal)."""
    sigma_d = float(sigma_d)
    if not np.isfinite(sigma_d) or sigma_d <= 0.0:
        raise DomainError("daily volatility must be positive")
    _, variance = gh_moments(marginal)
    if variance <= 0.0:
        raise DomainError("marginal variance must be positive")
    return sigma_d / np.sqrt(variance)
