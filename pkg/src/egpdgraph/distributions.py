"""GPD, extended GPD and zero-inflated mixture distribution functions.

All functions broadcast over numpy arrays. The extended GPD used here is the
power family ``G(y) = H(y) ** kappa`` where ``H`` is the GPD distribution
function with scale ``sigma`` and shape ``xi``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ParameterDomainError(ValueError):
    """Raised when distribution parameters or arguments are outside their domain."""


@dataclass(frozen=True)
class GpdParams:
    sigma: float
    xi: float

    def __post_init__(self):
        _check_positive(sigma=self.sigma)
        if np.any(~(np.asarray(self.xi) >= 0)):
            raise ParameterDomainError("xi must be nonnegative")


@dataclass(frozen=True)
class EgpdParams:
    kappa: float
    sigma: float
    xi: float

    def __post_init__(self):
        _check_positive(kappa=self.kappa, sigma=self.sigma, xi=self.xi)


@dataclass(frozen=True)
class MixtureParams:
    p0: float
    egpd: EgpdParams

    def __post_init__(self):
        p0 = np.asarray(self.p0)
        if np.any((p0 < 0) | (p0 > 1)) or np.any(np.isnan(p0)):
            raise ParameterDomainError("p0 must lie in [0, 1]")


def _check_positive(**params):
    for name, value in params.items():
        value = np.asarray(value, dtype=float)
        if np.any(~(value > 0)):
            raise ParameterDomainError(f"{name} must be strictly positive")


def _check_nonneg(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y >= 0)):
        raise ParameterDomainError("y must be nonnegative")
    return y


def _log1mexp(x):
    # log(1 - exp(x)) for x < 0
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x > -np.log(2.0), np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def _log_survival_gpd(y, sigma, xi):
    # log(1 + xi*y/sigma)^(-1/xi), with the exponential limit at xi == 0
    xi = np.asarray(xi, dtype=float)
    z = np.asarray(y, dtype=float) / sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(xi > 0, -np.log1p(xi * z) / np.where(xi > 0, xi, 1.0), -z)
    return out


def gpd_cdf(y, sigma, xi):
    """GPD distribution function ``1 - (1 + xi*y/sigma)^(-1/xi)``.

    ``xi == 0`` gives the exponential limit ``1 - exp(-y/sigma)``.
    """
    _check_positive(sigma=sigma)
    if np.any(~(np.asarray(xi) >= 0)):
        raise ParameterDomainError("xi must be nonnegative")
    y = _check_nonneg(y)
    return -np.expm1(_log_survival_gpd(y, sigma, xi))


def egpd_cdf(y, kappa, sigma, xi):
    _check_positive(kappa=kappa, sigma=sigma, xi=xi)
    y = _check_nonneg(y)
    return np.power(-np.expm1(_log_survival_gpd(y, sigma, xi)), kappa)


def egpd_sf(y, kappa, sigma, xi):
    """Survival function ``1 - G(y)``, accurate in the upper tail."""
    _check_positive(kappa=kappa, sigma=sigma, xi=xi)
    y = _check_nonneg(y)
    log_h = _log1mexp(_log_survival_gpd(y, sigma, xi))
    return -np.expm1(kappa * log_h)


def egpd_logpdf(y, kappa, sigma, xi):
    """Log density of the extended GPD at ``y > 0``."""
    _check_positive(kappa=kappa, sigma=sigma, xi=xi)
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise ParameterDomainError("y must be strictly positive")
    log1p_z = np.log1p(xi * y / sigma)
    log_cdf_gpd = _log1mexp(-log1p_z / xi)
    return (np.log(kappa) + (kappa - 1.0) * log_cdf_gpd
            - np.log(sigma) - (1.0 / xi + 1.0) * log1p_z)


def egpd_logpdf_grad(y, kappa, sigma, xi):
    """Log density and its derivatives w.r.t. ``log kappa``, ``log sigma``, ``log xi``.

    Returns
    -------
    logpdf, d_log_kappa, d_log_sigma, d_log_xi : ndarray
    """
    y = np.asarray(y, dtype=float)
    z = xi * y / sigma
    l1 = np.log1p(z)
    a = l1 / xi
    # E/(1-E) with E = (1+z)^(-1/xi)
    ratio = 1.0 / np.expm1(a)
    log_cdf_gpd = _log1mexp(-a)
    zz = z / (1.0 + z)
    logpdf = np.log(kappa) + (kappa - 1.0) * log_cdf_gpd - np.log(sigma) - (1.0 / xi + 1.0) * l1
    d_kappa = 1.0 + kappa * log_cdf_gpd
    d_sigma = -(kappa - 1.0) * ratio * zz / xi - 1.0 + (1.0 / xi + 1.0) * zz
    d_xi = (kappa - 1.0) * ratio * (zz - l1) / xi + a - (1.0 / xi + 1.0) * zz
    return logpdf, d_kappa, d_sigma, d_xi


def egpd_quantile(prob, kappa, sigma, xi):
    """Closed-form inverse of :func:`egpd_cdf`."""
    _check_positive(kappa=kappa, sigma=sigma, xi=xi)
    prob = np.asarray(prob, dtype=float)
    if np.any(~((prob > 0) & (prob < 1))):
        raise ParameterDomainError("prob must lie in (0, 1)")
    # sigma/xi * ((1 - prob^(1/kappa))^(-xi) - 1)
    log_one_minus = _log1mexp(np.log(prob) / kappa)
    return sigma / xi * np.expm1(-xi * log_one_minus)


def _open_uniform(rng, n):
    u = rng.random(n)
    while np.any(u == 0.0):
        zero = u == 0.0
        u[zero] = rng.random(int(zero.sum()))
    return u


def egpd_sample(n, kappa, sigma, xi, seed=None):
    """Draw ``n`` i.i.d. extended GPD variates by inversion."""
    if n < 1:
        raise ValueError("n must be at least 1")
    _check_positive(kappa=kappa, sigma=sigma, xi=xi)
    rng = np.random.default_rng(seed)
    return egpd_quantile(_open_uniform(rng, n), kappa, sigma, xi)


def mixture_cdf(y, p0, kappa, sigma, xi):
    """Zero-inflated CDF: atom ``1 - p0`` at zero, ``p0 * G`` on ``(0, inf)``."""
    y = _check_nonneg(y)
    p0 = np.asarray(p0, dtype=float)
    if np.any(~((p0 >= 0) & (p0 <= 1))):
        raise ParameterDomainError("p0 must lie in [0, 1]")
    return (1.0 - p0) + p0 * np.where(y > 0, egpd_cdf(y, kappa, sigma, xi), 0.0)


def mixture_quantile(prob, p0, kappa, sigma, xi):
    """Quantile of the zero-inflated mixture; 0 whenever ``prob <= 1 - p0``."""
    prob = np.asarray(prob, dtype=float)
    if np.any(~((prob > 0) & (prob < 1))):
        raise ParameterDomainError("prob must lie in (0, 1)")
    p0 = np.asarray(p0, dtype=float)
    if np.any((p0 < 0) | (p0 > 1)):
        raise ParameterDomainError("p0 must lie in [0, 1]")
    _check_positive(kappa=kappa, sigma=sigma, xi=xi)
    prob, p0, kappa, sigma, xi = np.broadcast_arrays(prob, p0, kappa, sigma, xi)
    out = np.zeros(prob.shape)
    pos = prob > 1.0 - p0
    if np.any(pos):
        cond = (prob[pos] - (1.0 - p0[pos])) / p0[pos]
        cond = np.clip(cond, np.finfo(float).tiny, np.nextafter(1.0, 0.0))
        out[pos] = egpd_quantile(cond, kappa[pos], sigma[pos], xi[pos])
    return out if out.ndim else float(out)
