"""Model calibration: log-ratio panels, GH marginal MLE, t-copula fitting.

Two-stage inference-functions-for-margins pipeline: each city's marginal is
fitted by likelihood maximization on its own complete day pairs, then the
copula is fitted on pseudo-observations from the complete cross-city rows
(Kendall-tau inversion for the correlation matrix, profile likelihood for the
degrees of freedom).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaln

from .copula import CopulaSpec, cholesky_factor
from .errors import CalibrationError, DataError, DomainError
from .ghdist import GhParams, gh_cdf, gh_logpdf
from .statkit import Rng, normal_quantile, t_quantile


@dataclass(frozen=True, eq=False)
class ConcentrationSeries:
    """Daily concentrations for one city; absent days are gaps."""

    city: str
    days: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "days", np.asarray(self.days, dtype=int))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.days.shape != self.values.shape or self.days.ndim != 1:
            raise DataError(f"{self.city}: days and values must be aligned vectors")
        if self.days.size and np.any(np.diff(self.days) <= 0):
            raise DataError(f"{self.city}: day indices must be strictly increasing")
        bad = np.flatnonzero(~(self.values > 0.0))
        if bad.size:
            raise DataError(
                f"{self.city}: nonpositive concentration at day {self.days[bad[0]]}"
            )


@dataclass(frozen=True, eq=False)
class LogRatioPanel:
    """Log-ratios aligned across cities on the union of pair-start days.

    ``mask`` records which (day, city) ratios exist; rows complete across all
    cities feed the copula fit, per-city columns feed the marginal fits.
    """

    cities: tuple[str, ...]
    days: np.ndarray
    values: np.ndarray
    mask: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def complete_rows(self) -> np.ndarray:
        return self.values[self.mask.all(axis=1)]

    def city_ratios(self, index: int) -> np.ndarray:
        return self.values[self.mask[:, index], index]

    def subset(self, rows: np.ndarray) -> "LogRatioPanel":
        rows = np.asarray(rows, dtype=int)
        return LogRatioPanel(
            cities=self.cities,
            days=self.days[rows],
            values=self.values[rows],
            mask=self.mask[rows],
        )


def compute_log_ratios(series_list: list[ConcentrationSeries]) -> LogRatioPanel:
    """One log-ratio per consecutive-day pair; gaps drop the spanning pairs."""
    if not series_list:
        raise DataError("no concentration series given")
    for s in series_list:
        if s.days.size < 2:
            raise DataError(f"{s.city}: need at least 2 observations")
    per_city: list[dict[int, float]] = []
    all_days: set[int] = set()
    for s in series_list:
        lookup = dict(zip(s.days.tolist(), s.values.tolist()))
        ratios = {
            int(d): float(np.log(lookup[d + 1] / lookup[d]))
            for d in s.days.tolist()
            if d + 1 in lookup
        }
        per_city.append(ratios)
        all_days.update(ratios)
    days = np.array(sorted(all_days), dtype=int)
    n, d = days.size, len(series_list)
    values = np.full((n, d), np.nan)
    mask = np.zeros((n, d), dtype=bool)
    for j, ratios in enumerate(per_city):
        for i, day in enumerate(days.tolist()):
            if day in ratios:
                values[i, j] = ratios[day]
                mask[i, j] = True
    return LogRatioPanel(
        cities=tuple(s.city for s in series_list), days=days, values=values, mask=mask
    )


@dataclass(frozen=True)
class GhFit:
    params: GhParams
    loglik: float
    warning: str | None = None


def _unpack(x: np.ndarray) -> GhParams:
    lam, g, log_delta, beta, mu = x
    alpha = float(np.hypot(beta, np.exp(g)))  # keeps alpha > |beta|
    return GhParams(lam=float(lam), alpha=alpha, delta=float(np.exp(log_delta)),
                    beta=float(beta), mu=float(mu))


def _negloglik(x: np.ndarray, samples: np.ndarray) -> float:
    if np.any(np.abs(x) > 50.0):
        return 1e18
    try:
        params = _unpack(x)
        val = -float(np.sum(gh_logpdf(params, samples)))
    except (DomainError, FloatingPointError, OverflowError):
        return 1e18
    return val if np.isfinite(val) else 1e18


def _start_points(samples: np.ndarray, rng: Rng) -> list[np.ndarray]:
    m = float(np.mean(samples))
    med = float(np.median(samples))
    s = max(float(np.std(samples)), 1e-3)
    sk = float(stats.skew(samples))
    beta0 = float(np.clip(2.0 * sk / s, -3.0, 3.0))
    starts = [
        np.array([1.0, np.log(1.0 / s), np.log(s), 0.0, m]),
        np.array([-0.5, np.log(1.0 / s), np.log(0.8 * s), 0.0, med]),
        np.array([1.0, np.log(1.5 / s), np.log(s), beta0, med]),
        np.array([0.2, np.log(1.0 / s), np.log(1.5 * s), 0.5 * beta0, m]),
    ]
    g = rng.generator()
    starts.append(starts[0] + 0.25 * g.standard_normal(5))
    return starts


def fit_gh_marginal(samples, *, rng: Rng | None = None) -> GhFit:
    """GH parameters maximizing the log-likelihood of ``samples``.

    Derivative-free simplex search restarted from five moment-informed points
    on an unconstrained scale (log delta, log of the alpha-|beta| slack).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1 or samples.size < 2:
        raise DataError("samples must be a vector with at least 2 entries")
    if not np.all(np.isfinite(samples)):
        raise DataError("samples must be finite")
    warning = None if samples.size >= 100 else "fewer than 100 samples; fit is fragile"
    rng = rng if rng is not None else Rng(20140101)

    trace = []
    best = None
    for x0 in _start_points(samples, rng):
        res = optimize.minimize(
            _negloglik,
            x0,
            args=(samples,),
            method="Nelder-Mead",
            options={"maxfev": 400, "xatol": 1e-4, "fatol": 1e-3, "adaptive": True},
        )
        trace.append((res.fun, res.message))
        if np.isfinite(res.fun) and res.fun < 1e17 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise CalibrationError(f"GH likelihood maximization failed; trace: {trace}")
    # polish the winning restart; fatol well below the 0.5-log-point scale at
    # which competing fits are compared
    polished = optimize.minimize(
        _negloglik,
        best.x,
        args=(samples,),
        method="Nelder-Mead",
        options={"maxfev": 1500, "xatol": 1e-5, "fatol": 1e-4, "adaptive": True},
    )
    if np.isfinite(polished.fun) and polished.fun <= best.fun:
        best = polished
    return GhFit(params=_unpack(best.x), loglik=-float(best.fun), warning=warning)


def _nearest_correlation(mat: np.ndarray) -> tuple[np.ndarray, bool]:
    # eigenvalue clipping followed by diagonal renormalization
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    floor = 1e-6 * float(eigvals.max())
    clipped = eigvals < floor
    if not clipped.any():
        np.fill_diagonal(sym, 1.0)
        return sym, False
    rebuilt = (eigvecs * np.maximum(eigvals, floor)) @ eigvecs.T
    scale = 1.0 / np.sqrt(np.diag(rebuilt))
    rebuilt = rebuilt * np.outer(scale, scale)
    np.fill_diagonal(rebuilt, 1.0)
    return 0.5 * (rebuilt + rebuilt.T), True


def _mvt_logdensity(x: np.ndarray, sigma: np.ndarray, nu: float) -> float:
    d = x.shape[1]
    chol = cho_factor(sigma, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    q = np.sum(x * cho_solve(chol, x.T).T, axis=1)
    const = (
        gammaln((nu + d) / 2.0)
        - gammaln(nu / 2.0)
        - 0.5 * d * np.log(nu * np.pi)
        - 0.5 * logdet
    )
    return float(np.sum(const - 0.5 * (nu + d) * np.log1p(q / nu)))


def _t_marginal_logdensity(x: np.ndarray, nu: float) -> float:
    const = gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0) - 0.5 * np.log(nu * np.pi)
    return float(np.sum(const - 0.5 * (nu + 1.0) * np.log1p(x**2 / nu)))


def t_copula_loglik(u: np.ndarray, sigma: np.ndarray, nu: float) -> float:
    x = t_quantile(u, nu)
    return _mvt_logdensity(x, sigma, nu) - _t_marginal_logdensity(x, nu)


def normal_copula_loglik(u: np.ndarray, sigma: np.ndarray) -> float:
    x = normal_quantile(u)
    chol = cho_factor(sigma, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    q = np.sum(x * cho_solve(chol, x.T).T, axis=1) - np.sum(x**2, axis=1)
    return float(-0.5 * (u.shape[0] * logdet + np.sum(q)))


@dataclass(frozen=True)
class CopulaFit:
    spec: CopulaSpec
    loglik_t: float
    loglik_normal: float
    warning: str | None = None


def fit_t_copula(panel: LogRatioPanel, marginals: list[GhParams], *,
                 nu_bounds: tuple[float, float] = (0.5, 200.0)) -> CopulaFit:
    """t-copula fit: Kendall-tau inversion for sigma, profile likelihood for nu.

    Pseudo-observations come from the supplied marginal CDFs on complete
    rows.  The normal-copula log-likelihood at the same sigma is reported for
    family comparison.
    """
    rows = panel.complete_rows()
    if rows.shape[0] < 100:
        raise DataError(f"need at least 100 complete rows, have {rows.shape[0]}")
    d = rows.shape[1]
    if len(marginals) != d:
        raise DomainError("need one marginal per panel column")
    u = np.column_stack(
        [gh_cdf(marginals[j], rows[:, j]) for j in range(d)]
    )
    u = np.clip(u, 1e-12, 1.0 - 1e-12)

    sigma = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            tau_ij = stats.kendalltau(u[:, i], u[:, j]).statistic
            sigma[i, j] = sigma[j, i] = np.sin(0.5 * np.pi * tau_ij)
    sigma = np.clip(sigma, -1.0 + 1e-10, 1.0 - 1e-10)
    np.fill_diagonal(sigma, 1.0)
    sigma, projected = _nearest_correlation(sigma)
    warning = None
    if projected:
        warning = "correlation matrix projected to positive definite (near-singular dependence)"
    try:
        cholesky_factor(sigma)
    except CalibrationError as exc:
        raise CalibrationError(f"projection failed to restore definiteness: {exc}") from exc

    res = optimize.minimize_scalar(
        lambda lnu: -t_copula_loglik(u, sigma, float(np.exp(lnu))),
        bounds=(np.log(nu_bounds[0]), np.log(nu_bounds[1])),
        method="bounded",
        options={"xatol": 1e-5},
    )
    nu_hat = float(np.exp(res.x))
    return CopulaFit(
        spec=CopulaSpec(family="t", sigma=sigma, nu=nu_hat),
        loglik_t=-float(res.fun),
        loglik_normal=normal_copula_loglik(u, sigma),
        warning=warning,
    )


def empirical_correlation(panel: LogRatioPanel) -> np.ndarray:
    """Pearson correlation of the complete log-ratio rows."""
    rows = panel.complete_rows()
    if rows.shape[0] < 3:
        raise DataError("need at least 3 complete rows")
    if np.any(np.std(rows, axis=0) <= 0.0):
        raise DataError("a log-ratio column has zero variance")
    return np.corrcoef(rows, rowvar=False)


def split_train_holdout(panel: LogRatioPanel, fraction: float,
                        rng: Rng) -> tuple[LogRatioPanel, LogRatioPanel]:
    """Random row split: ceil(fraction * n) training rows, rest held out."""
    if not 0.0 < fraction < 1.0:
        raise DomainError("fraction must lie in (0, 1)")
    n = panel.n_rows
    perm = rng.generator().permutation(n)
    n_train = int(np.ceil(fraction * n))
    train = np.sort(perm[:n_train])
    hold = np.sort(perm[n_train:])
    return panel.subset(train), panel.subset(hold)
