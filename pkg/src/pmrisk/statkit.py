"""Distribution primitives and the reproducible random-number source.

Everything here is a thin, validated layer over scipy.special / numpy so the
rest of the engine has one place to get CDFs, quantiles, Bessel functions and
gamma variates with consistent domain checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError

_MASK64 = (1 << 64) - 1


def _mix64(a: int, b: int) -> int:
    # splitmix64 finalizer; avalanches (stream, index) into a fresh stream id
    x = (a * 0x9E3779B97F4A7C15 + b + 1) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


@dataclass(frozen=True)
class Rng:
    """Counter-based random source keyed by (seed, stream).

    Identical (seed, stream) pairs always reproduce the same variate
    sequence; distinct streams are statistically independent (Philox keys).
    Instances are immutable; ``split`` derives child streams so chunked or
    stratified sampling stays reproducible regardless of execution order.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def split(self, index: int) -> "Rng":
        if index < 0:
            raise DomainError("split index must be nonnegative")
        return Rng(self.seed, _mix64(self.stream & _MASK64, index))


def _as_finite_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _scalar_like(value: np.ndarray, template) -> float | np.ndarray:
    if np.ndim(template) == 0:
        return float(value)
    return value


def normal_cdf(x):
    """Standard normal CDF Phi(x); accepts scalars or arrays."""
    arr = _as_finite_array(x, "x")
    return _scalar_like(special.ndtr(arr), x)


def normal_quantile(p):
    """Inverse of ``normal_cdf`` for p in (0, 1)."""
    arr = _as_finite_array(p, "p")
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("p must lie strictly inside (0, 1)")
    return _scalar_like(special.ndtri(arr), p)


def t_cdf(x, nu):
    """Student-t CDF with (possibly non-integer) degrees of freedom nu > 0."""
    arr = _as_finite_array(x, "x")
    nu = float(nu)
    if not np.isfinite(nu) or nu <= 0.0:
        raise DomainError("nu must be a positive finite real")
    return _scalar_like(special.stdtr(nu, arr), x)


def t_quantile(p, nu):
    """Inverse of ``t_cdf``; used by the copula calibration."""
    arr = _as_finite_array(p, "p")
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("p must lie strictly inside (0, 1)")
    nu = float(nu)
    if not np.isfinite(nu) or nu <= 0.0:
        raise DomainError("nu must be a positive finite real")
    return _scalar_like(special.stdtrit(nu, arr), p)


def sample_gamma(shape, scale, rng: Rng, size=None):
    """Gamma(shape, scale) draws; chi-square with nu dof is (nu/2, 2).

    Drawn as scale * standard_gamma(shape) so the bit stream consumed depends
    only on ``shape``; tilting the scale never perturbs the underlying draws.
    """
    shape = float(shape)
    scale = float(scale)
    if not np.isfinite(shape) or shape <= 0.0:
        raise DomainError("shape must be positive")
    if not np.isfinite(scale) or scale <= 0.0:
        raise DomainError("scale must be positive")
    g = rng.generator()
    out = scale * g.standard_gamma(shape, size=size)
    if size is None:
        return float(out)
    return out


def bessel_k(order, x):
    """Modified Bessel function of the second kind K_order(x), x > 0."""
    arr = _as_finite_array(x, "x")
    if np.any(arr <= 0.0):
        raise DomainError("x must be positive")
    order_arr = _as_finite_array(order, "order")
    out = special.kv(order_arr, arr)
    if np.ndim(x) == 0 and np.ndim(order) == 0:
        return float(out)
    return out
