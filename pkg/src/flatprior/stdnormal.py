"""Standard-normal special functions and closed-form univariate standardizations.

All functions accept scalars or arrays and work element-wise.  Inputs are
validated: non-finite values raise :class:`DomainError`, and quantiles
reject the closed boundaries of the unit interval instead of clamping.
"""

import threading

import numpy as np
from scipy import special

from .errors import DomainError, OverflowGuardError

_SQRT2 = np.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

_nudge_lock = threading.Lock()
_nudge_count = 0


def boundary_nudges():
    """Number of CDF outputs that rounded onto 0 or 1 and were moved inside."""
    return _nudge_count


def reset_boundary_nudges():
    global _nudge_count
    with _nudge_lock:
        _nudge_count = 0


def _record_nudges(n):
    global _nudge_count
    if n:
        with _nudge_lock:
            _nudge_count += int(n)


def _finite(x, name="x"):
    x = np.asarray(x)
    # extended-precision probabilities from std_normal_cdf pass through intact
    x = x.astype(np.longdouble if x.dtype == np.longdouble else float, copy=False)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} must be finite")
    return x


def _unit_interval(u):
    u = _finite(u, "u")
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise DomainError("u must lie strictly inside (0, 1)")
    return u


def _out(x):
    if x.ndim:
        return x
    return x[()] if x.dtype == np.longdouble else x.item()


def erf(x):
    return _out(special.erf(_finite(x)))


def erfc(x):
    return _out(special.erfc(_finite(x)))


def erfinv(y):
    """Inverse error function on (-1, 1), polished by one Newton step."""
    y = _finite(y, "y")
    if np.any(np.abs(y) >= 1.0):
        raise DomainError("erfinv needs |y| < 1")
    x = special.erfinv(y)
    # f'(x) = 2/sqrt(pi) exp(-x^2)
    x = x - (special.erf(x) - y) * (0.5 * np.sqrt(np.pi) * np.exp(x * x))
    return _out(x)


def std_normal_logpdf(xi):
    xi = _finite(xi, "xi")
    return _out(-0.5 * xi * xi - _LOG_SQRT_2PI)


def std_normal_cdf(xi):
    """Phi(xi) = 1/2 + 1/2 erf(xi / sqrt 2), kept strictly inside (0, 1).

    The result is ``np.longdouble``: near 1 a double can only resolve the
    upper tail to about 1e-16 absolute, which costs 1e-8 in the quantile at
    xi = 6.  The tail mass itself is computed in double through ``erfc`` and
    subtracted from 1 in extended precision.
    """
    xi = np.asarray(_finite(xi, "xi"), dtype=float)
    tail = 0.5 * special.erfc(np.abs(xi) / _SQRT2)
    u = np.where(xi < 0, tail.astype(np.longdouble), np.longdouble(1) - tail.astype(np.longdouble))
    low = u <= 0
    high = u >= 1
    if np.any(low) or np.any(high):
        _record_nudges(np.count_nonzero(low) + np.count_nonzero(high))
        u = np.where(low, np.nextafter(np.longdouble(0), np.longdouble(1)), u)
        u = np.where(high, np.nextafter(np.longdouble(1), np.longdouble(0)), u)
    return _out(u)


def std_normal_sf(xi):
    """Upper tail 1 - Phi(xi) evaluated without cancellation."""
    xi = _finite(xi, "xi")
    return _out(0.5 * special.erfc(xi / _SQRT2))


def std_normal_quantile(u):
    """Inverse of :func:`std_normal_cdf` on the open unit interval."""
    u = _unit_interval(u)
    # work on the smaller tail mass q; 1 - u is exact for u >= 1/2
    upper = u > 0.5
    q = np.where(upper, 1 - u, u).astype(float)
    z = special.ndtri(q)
    # one Newton step on the tail mass; skipped where the density underflows
    # and ndtri is already exact to rounding
    pdf = np.exp(-0.5 * z * z - _LOG_SQRT_2PI)
    ok = pdf > 1e-300
    resid = 0.5 * special.erfc(-z / _SQRT2) - q
    z = np.where(ok, z - resid / np.where(ok, pdf, 1.0), z)
    return _out(np.where(upper, -z, z))


def gaussian_cdf(x, mu, sigma):
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    return std_normal_cdf((_finite(x) - mu) / sigma)


def gaussian_quantile(u, mu, sigma):
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    return _out(mu + sigma * np.asarray(std_normal_quantile(u), dtype=float))


def exp_cdf(x, lam):
    if lam <= 0:
        raise DomainError("rate must be positive")
    x = _finite(x)
    if np.any(x <= 0):
        raise DomainError("exponential variates must be positive")
    return _out(-np.expm1(-lam * x))


def exp_quantile(u, lam):
    """F^{-1}(u) = -ln(1 - u) / lam for the exponential distribution."""
    if lam <= 0:
        raise DomainError("rate must be positive")
    u = _unit_interval(u)
    return _out((-np.log1p(-u) / lam).astype(float))


def standardize_gaussian(xi, mu, sigma):
    """Gaussian quantile composed with the standard-normal CDF: mu + sigma xi."""
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    return _out(mu + sigma * _finite(xi, "xi"))


def standardize_exponential(xi, lam):
    """Exponential quantile composed with the standard-normal CDF.

    Evaluates ``-ln(1/2 erfc(xi/sqrt 2)) / lam`` through ``log_ndtr`` so the
    upper tail keeps full precision where ``1/2 - 1/2 erf`` would cancel.
    Raises :class:`OverflowGuardError` when the result is not a finite
    positive number (|xi| beyond roughly 38 on the negative side).
    """
    if lam <= 0:
        raise DomainError("rate must be positive")
    xi = _finite(xi, "xi")
    with np.errstate(over="ignore", under="ignore"):
        out = -special.log_ndtr(-xi) / lam
    if not np.all(np.isfinite(out)) or np.any(out <= 0.0):
        raise OverflowGuardError("standardize_exponential saturated; xi out of representable range")
    return _out(out)


def unstandardize_exponential(x, lam):
    """Inverse of :func:`standardize_exponential`."""
    if lam <= 0:
        raise DomainError("rate must be positive")
    x = _finite(x)
    if np.any(x <= 0):
        raise DomainError("exponential variates must be positive")
    # Phi(-xi) = exp(-lam x)  ->  xi = -ndtri(exp(-lam x))
    return _out(-special.ndtri(np.exp(-lam * x)))
