"""Scores and diagnostics for fitted zero-inflated eGPD models."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import ndtri

from egpdgraph.distributions import egpd_cdf, mixture_quantile

PIT_CLAMP = 1e-12


class UndefinedScoreError(ValueError):
    """A score is undefined for the given input (for example a single-class AUC)."""


# ---------------------------------------------------------------- AUC

def auc(labels, scores):
    """Mann-Whitney estimate of the ROC area; tied pairs count one half."""
    labels = np.asarray(labels).astype(bool).ravel()
    scores = np.asarray(scores, dtype=float).ravel()
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedScoreError("AUC needs at least one positive and one negative label")
    ranks = stats.rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ---------------------------------------------------------------- twCRPS

def _r_tilde(x):
    return -np.expm1(-0.25 * np.log1p((np.asarray(x, dtype=float) + 1.0) ** 2 / 10.0))


@dataclass(frozen=True)
class TwcrpsScheme:
    """Thresholds and tail weight of the Brier-sum twCRPS estimator.

    ``upper_index`` is the one-based index of the last threshold summed and
    also the normalisation point of the weight.
    """
    thresholds: tuple = field(default_factory=lambda: tuple(np.geomspace(0.01, 200.0, 22)))
    upper_index: int = 19

    def __post_init__(self):
        u = np.asarray(self.thresholds, dtype=float)
        if u.ndim != 1 or len(u) < 1 or np.any(np.diff(u) <= 0) or u[0] < 0:
            raise ValueError("thresholds must be nonnegative and strictly increasing")
        if not 1 <= self.upper_index <= len(u):
            raise ValueError(f"upper_index must lie in 1..{len(u)}")

    @property
    def used(self):
        return np.asarray(self.thresholds[: self.upper_index], dtype=float)

    def to_dict(self):
        return {"thresholds": [float(u) for u in self.thresholds], "upper_index": self.upper_index}


def weight_r_tilde(x):
    return _r_tilde(x)


def weight_r(x, scheme=None):
    """Tail weight normalised to one at the last summed threshold."""
    scheme = scheme or TwcrpsScheme()
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("weight_r is defined for x >= 0")
    out = _r_tilde(x) / _r_tilde(scheme.thresholds[scheme.upper_index - 1])
    return float(out) if out.ndim == 0 else out


def twcrps(y, cdf_at_thresholds, scheme=None, weighted=True):
    """Brier-sum estimator over cells.

    ``cdf_at_thresholds`` has shape ``(n, n_thresholds)`` (or at least
    ``upper_index`` columns) holding the fitted positive-part CDF at each
    threshold for each cell.
    """
    scheme = scheme or TwcrpsScheme()
    y = np.asarray(y, dtype=float).ravel()
    F = np.asarray(cdf_at_thresholds, dtype=float).reshape(len(y), -1)[:, : scheme.upper_index]
    u = scheme.used
    w = weight_r(u, scheme) if weighted else np.ones_like(u)
    brier = ((y[:, None] <= u).astype(float) - F) ** 2
    return float(np.sum(brier @ w))


def crps(y, cdf_at_thresholds, scheme=None):
    """The same estimator with unit weight."""
    return twcrps(y, cdf_at_thresholds, scheme, weighted=False)


def egpd_threshold_cdf(kappa, sigma, xi, scheme=None):
    scheme = scheme or TwcrpsScheme()
    sigma = np.asarray(sigma, dtype=float).ravel()
    return egpd_cdf(np.asarray(scheme.thresholds)[None, :], kappa, sigma[:, None], xi)


# ---------------------------------------------------------------- PIT / Q-Q

def pit(y, kappa, sigma, xi):
    u = egpd_cdf(np.asarray(y, dtype=float), kappa, sigma, xi)
    return np.clip(u, PIT_CLAMP, 1.0 - PIT_CLAMP)


def to_margin(u, margin):
    u = np.clip(np.asarray(u, dtype=float), PIT_CLAMP, 1.0 - PIT_CLAMP)
    if margin == "exponential":
        return -np.log1p(-u)
    if margin == "gaussian":
        return ndtri(u)
    raise ValueError(f"unknown margin {margin!r}; use 'exponential' or 'gaussian'")


def plotting_positions(n):
    return np.arange(1, n + 1) / (n + 1.0)


def pit_qq(u, margin):
    """Sorted transformed PIT values against theoretical quantiles at ``i/(n+1)``."""
    u = np.asarray(u, dtype=float).ravel()
    if u.size < 2:
        raise ValueError("Q-Q needs at least two positive cells")
    empirical = np.sort(to_margin(u, margin))
    theoretical = to_margin(plotting_positions(u.size), margin)
    return empirical, theoretical


def qq_band(replicate_u, n, margin, level=0.95):
    """Pointwise tolerance envelope for the sorted transformed PIT values.

    Each replicate's transformed values are summarised by their empirical
    quantiles at the common plotting positions ``i/(n+1)`` (the ``weibull``
    rule, which returns the i-th order statistic when the replicate also has
    ``n`` values); the envelope is the pointwise ``(1-level)/2`` and
    ``(1+level)/2`` quantile across replicates.
    """
    probs = plotting_positions(n)
    curves = np.array([np.quantile(to_margin(u, margin), probs, method="weibull")
                       for u in replicate_u])
    a = (1.0 - level) / 2.0
    return np.quantile(curves, a, axis=0), np.quantile(curves, 1.0 - a, axis=0)


def qq_table(u, margin, replicate_u=()):
    empirical, theoretical = pit_qq(u, margin)
    if len(replicate_u):
        lo, hi = qq_band(replicate_u, len(empirical), margin)
    else:
        lo = hi = np.full_like(empirical, np.nan)
    return pd.DataFrame({"empirical": empirical, "theoretical": theoretical,
                         "band_lo": lo, "band_hi": hi})


def band_coverage(table):
    inside = (table["empirical"] >= table["band_lo"]) & (table["empirical"] <= table["band_hi"])
    return float(inside.mean())


# ---------------------------------------------------------------- hazard

def compound_hazard(p0, kappa, sigma, xi, sqrt_area, level=0.99):
    return mixture_quantile(level, p0, kappa, sigma, xi) / sqrt_area


def hazard_metrics(fit, graph, panel, months=None):
    """Per region-month ``p0``, log relative severity and compound hazard.

    ``months`` selects zero-based month indices; default is every month.
    Returns a frame with columns ``region_id, month, p0, log_rel_severity, ch``
    where ``month`` is the one-based position in the panel.
    """
    p0, sigma, m = fit.predict(panel, graph)
    V, T = p0.shape
    t_idx = np.arange(T) if months is None else np.atleast_1d(np.asarray(months, dtype=int))
    if np.any((t_idx < 0) | (t_idx >= T)):
        raise IndexError(f"month index out of range 0..{T - 1}")
    sa = panel.regions.sqrt_area[:, None]
    ch = compound_hazard(p0[:, t_idx], fit.kappa, sigma[:, t_idx], fit.xi, sa)
    return pd.DataFrame({
        "region_id": np.repeat(panel.regions.ids, len(t_idx)),
        "month": np.tile(t_idx + 1, V),
        "p0": p0[:, t_idx].ravel(),
        "log_rel_severity": m[:, t_idx].ravel(),
        "ch": np.asarray(ch).ravel(),
    })


# ---------------------------------------------------------------- trends

@dataclass(frozen=True)
class TrendLine:
    slope: float
    intercept: float
    slope_se: float

    def __call__(self, t):
        return self.intercept + self.slope * np.asarray(t, dtype=float)


def trend(series, t=None):
    """Ordinary least squares line through ``(t, series)``; ``t`` defaults to 1..n."""
    y = np.asarray(series, dtype=float).ravel()
    if y.size < 2:
        raise ValueError("trend needs at least two months")
    t = np.arange(1, y.size + 1, dtype=float) if t is None else np.asarray(t, dtype=float)
    tc = t - t.mean()
    sxx = tc @ tc
    slope = (tc @ (y - y.mean())) / sxx
    intercept = y.mean() - slope * t.mean()
    resid = y - intercept - slope * t
    se = np.sqrt(resid @ resid / (y.size - 2) / sxx) if y.size > 2 else np.nan
    return TrendLine(float(slope), float(intercept), float(se))


def spatial_mean_series(values, available):
    """Per-month mean over regions whose response is available; NaN if none."""
    values = np.asarray(values, dtype=float)
    available = np.asarray(available, dtype=bool)
    counts = available.sum(axis=0)
    sums = np.where(available, values, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


# ---------------------------------------------------------------- scoring a fit

def score_fit(fit, graph, panel, scheme=None, subsets=("validation", "all")):
    """AUC, CRPS and twCRPS of a fitted model on the requested cell subsets."""
    from egpdgraph.training import VALIDATION

    scheme = scheme or TwcrpsScheme()
    p0, sigma, _ = fit.predict(panel, graph)
    observed = panel.observed
    z = panel.positive
    rows = []
    for subset in subsets:
        if subset == "validation":
            if fit.labels is None:
                raise ValueError("fit has no split labels; load it with the panel")
            cells = fit.labels == VALIDATION
        elif subset == "all":
            cells = observed
        else:
            raise ValueError(f"unknown subset {subset!r}")
        pos = cells & z
        F = egpd_threshold_cdf(fit.kappa, sigma[pos], fit.xi, scheme)
        try:
            a = auc(z[cells], p0[cells])
        except UndefinedScoreError:
            a = np.nan
        rows += [
            {"metric": f"auc_{subset}", "value": a},
            {"metric": f"crps_{subset}", "value": crps(panel.y[pos], F, scheme)},
            {"metric": f"twcrps_{subset}", "value": twcrps(panel.y[pos], F, scheme)},
            {"metric": f"n_positive_{subset}", "value": float(pos.sum())},
        ]
    return rows
