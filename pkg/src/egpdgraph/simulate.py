"""Synthetic panels with known zero-inflated eGPD parameter fields.

The truth is linear in the raw covariates::

    logit p0(s, t)  = occ_intercept + x(s, t) . occ_coef
    log sigma(s, t) = log sqrt(a(s)) + scale_intercept + x(s, t) . scale_coef

Covariates are Gaussian fields over region centroids with an exponential
spatial correlation and AR(1) persistence over months.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

from egpdgraph.data import PanelDataset
from egpdgraph.distributions import egpd_quantile, _open_uniform
from egpdgraph.graph import RegionSet, great_circle


@dataclass
class TruthConfig:
    n_regions: int = 200
    n_months: int = 120
    n_covariates: int = 3
    kappa: float = 0.831
    xi: float = 0.161
    occ_intercept: float = 0.0
    occ_coef: list = field(default_factory=lambda: [3.0, -2.5, 0.0])
    scale_intercept: float = 0.0
    scale_coef: list = field(default_factory=lambda: [0.5, 0.0, -0.3])
    lat_range: tuple = (-38.0, -28.0)
    lon_range: tuple = (140.0, 152.0)
    area_range: tuple = (10.0, 2000.0)
    field_range_km: float = 300.0
    ar_coef: float = 0.5
    start_year: int = 2000
    missing_regions: int = 0
    adjacency: dict = field(default_factory=lambda: {"lambda": 650.0, "alpha": 2, "delta": 700.0})

    def __post_init__(self):
        self.occ_coef = [float(c) for c in self.occ_coef]
        self.scale_coef = [float(c) for c in self.scale_coef]
        if len(self.occ_coef) != self.n_covariates or len(self.scale_coef) != self.n_covariates:
            raise ValueError("coefficient vectors must have n_covariates entries")
        if not (self.kappa > 0 and self.xi > 0):
            raise ValueError("kappa and xi must be positive")

    @classmethod
    def from_dict(cls, record):
        known = {k: v for k, v in record.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self):
        return asdict(self)


@dataclass
class Simulation:
    panel: PanelDataset
    p0: np.ndarray
    sigma: np.ndarray
    truth: TruthConfig
    seed: int

    def save(self, out_dir):
        out_dir.mkdir(parents=True, exist_ok=True)
        self.panel.regions.to_csv(out_dir / "regions.csv")
        self.panel.to_csv(out_dir / "panel.csv")
        record = {"seed": self.seed, **self.truth.to_dict()}
        (out_dir / "truth.json").write_text(json.dumps(record, indent=2))
        V, T = self.p0.shape
        pd.DataFrame({
            "region_id": np.repeat(self.panel.regions.ids, T),
            "year": np.tile(self.panel.years, V),
            "month": np.tile(self.panel.months, V),
            "p0": self.p0.ravel(),
            "sigma": self.sigma.ravel(),
        }).to_csv(out_dir / "truth_cells.csv", index=False, float_format="%.17g")


def gaussian_fields(regions, n_months, n_fields, range_km, ar_coef, rng):
    """Spatially correlated, temporally AR(1) standard Gaussian fields, shape ``(V, T, n)``."""
    h = great_circle(regions.lat[:, None], regions.lon[:, None],
                     regions.lat[None, :], regions.lon[None, :])
    cov = np.exp(-h / range_km) + 1e-8 * np.eye(len(regions))
    L = np.linalg.cholesky(cov)
    innov = np.sqrt(1.0 - ar_coef ** 2)
    out = np.empty((len(regions), n_months, n_fields))
    state = L @ rng.standard_normal((len(regions), n_fields))
    for t in range(n_months):
        if t:
            state = ar_coef * state + innov * (L @ rng.standard_normal((len(regions), n_fields)))
        out[:, t] = state
    return out


def simulate(truth, seed):
    """Draw a panel from ``truth`` (a :class:`TruthConfig` or dict)."""
    if isinstance(truth, dict):
        truth = TruthConfig.from_dict(truth)
    rng = np.random.default_rng(seed)
    V, T, d = truth.n_regions, truth.n_months, truth.n_covariates
    lat = rng.uniform(*truth.lat_range, V)
    lon = rng.uniform(*truth.lon_range, V)
    area = np.exp(rng.uniform(np.log(truth.area_range[0]), np.log(truth.area_range[1]), V))
    regions = RegionSet(np.arange(1, V + 1), lat, lon, area)
    X = gaussian_fields(regions, T, d, truth.field_range_km, truth.ar_coef, rng)

    logit = truth.occ_intercept + X @ np.asarray(truth.occ_coef)
    p0 = expit(logit)
    sigma = np.sqrt(area)[:, None] * np.exp(truth.scale_intercept + X @ np.asarray(truth.scale_coef))
    occurs = rng.random((V, T)) < p0
    u = _open_uniform(rng, V * T).reshape(V, T)
    y = np.where(occurs, egpd_quantile(u, truth.kappa, sigma, truth.xi), 0.0)
    if truth.missing_regions:
        y[rng.choice(V, truth.missing_regions, replace=False)] = np.nan

    t = np.arange(T)
    years = truth.start_year + t // 12
    months = t % 12 + 1
    names = tuple(f"x{k + 1}" for k in range(d))
    panel = PanelDataset(regions, years, months, X, y, names)
    return Simulation(panel, p0, sigma, truth, int(seed))
