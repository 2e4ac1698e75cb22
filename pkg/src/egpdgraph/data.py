"""Space-time panels: container, validated CSV ingestion and export."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from egpdgraph.graph import RegionSet

KEY_COLUMNS = ("region_id", "year", "month")
RESPONSE = "response"


class ValidationError(ValueError):
    """Input files are malformed or violate a panel invariant."""


@dataclass(frozen=True)
class PanelDataset:
    """Covariates ``X`` of shape ``(V, T, d)`` and responses ``y`` of shape ``(V, T)``.

    Missing responses are NaN; covariates are always present.
    """
    regions: RegionSet
    years: np.ndarray
    months: np.ndarray
    X: np.ndarray
    y: np.ndarray
    covariate_names: tuple = field(default_factory=tuple)

    def __post_init__(self):
        V, T = len(self.regions), len(self.years)
        if self.X.shape[:2] != (V, T) or self.X.ndim != 3:
            raise ValidationError(f"X has shape {self.X.shape}, expected ({V}, {T}, d)")
        if self.y.shape != (V, T):
            raise ValidationError(f"y has shape {self.y.shape}, expected ({V}, {T})")
        if len(self.covariate_names) != self.X.shape[2]:
            raise ValidationError("covariate_names does not match the covariate count")
        if not np.all(np.isfinite(self.X)):
            v, t, k = np.argwhere(~np.isfinite(self.X))[0]
            raise ValidationError(f"non-finite covariate {self.covariate_names[k]!r} at "
                                  f"region {self.regions.ids[v]}, {self._date(t)}")
        neg = np.argwhere(self.y < 0)
        if len(neg):
            v, t = neg[0]
            raise ValidationError(f"negative response {self.y[v, t]} at region "
                                  f"{self.regions.ids[v]}, {self._date(t)}")

    def _date(self, t):
        return f"{int(self.years[t])}-{int(self.months[t]):02d}"

    @property
    def n_regions(self):
        return self.X.shape[0]

    @property
    def n_months(self):
        return self.X.shape[1]

    @property
    def n_covariates(self):
        return self.X.shape[2]

    @property
    def observed(self):
        return ~np.isnan(self.y)

    @property
    def positive(self):
        return self.observed & (np.nan_to_num(self.y) > 0)

    def select_months(self, idx):
        """Panel built from the month slices ``idx`` (repeats allowed)."""
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, years=self.years[idx], months=self.months[idx],
                       X=self.X[:, idx], y=self.y[:, idx])

    def summary(self):
        obs = self.observed
        return {
            "regions": self.n_regions,
            "months": self.n_months,
            "covariates": list(self.covariate_names),
            "cells": int(obs.size),
            "missing_responses": int((~obs).sum()),
            "positive_responses": int(self.positive.sum()),
            "covariate_mean": dict(zip(self.covariate_names, self.X.mean(axis=(0, 1)).round(6).tolist())),
            "covariate_sd": dict(zip(self.covariate_names, self.X.std(axis=(0, 1)).round(6).tolist())),
        }

    # -------------------------------------------------------------- io

    def to_frame(self):
        V, T, d = self.X.shape
        frame = {
            "region_id": np.repeat(self.regions.ids, T),
            "year": np.tile(self.years, V),
            "month": np.tile(self.months, V),
        }
        for k, name in enumerate(self.covariate_names):
            frame[name] = self.X[:, :, k].ravel()
        frame[RESPONSE] = self.y.ravel()
        return pd.DataFrame(frame)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, na_rep="NA", float_format="%.17g")


def read_panel(regions, panel_path):
    """Read a long-form panel ``region_id,year,month,<covariates...>,response``.

    Raises :class:`ValidationError` naming the offending cell for negative
    responses, non-finite covariates, unknown region ids, duplicates and
    incomplete region-month grids.
    """
    try:
        df = pd.read_csv(panel_path, na_values=["NA"], keep_default_na=False,
                         float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as exc:
        raise ValidationError(f"cannot read {panel_path}: {exc}") from exc
    missing = [c for c in (*KEY_COLUMNS, RESPONSE) if c not in df.columns]
    if missing:
        raise ValidationError(f"{panel_path}: missing columns {missing}")
    covariates = [c for c in df.columns if c not in (*KEY_COLUMNS, RESPONSE)]
    if not covariates:
        raise ValidationError(f"{panel_path}: no covariate columns")

    unknown = sorted(set(df["region_id"].astype(int)) - set(regions.ids.astype(int)))
    if unknown:
        raise ValidationError(f"{panel_path}: unknown region id(s) {unknown[:10]}")
    for name in covariates:
        values = pd.to_numeric(df[name], errors="coerce").to_numpy(float)
        bad = ~np.isfinite(values)
        if bad.any():
            row = df.iloc[int(np.argmax(bad))]
            raise ValidationError(
                f"non-finite covariate {name!r} at region {int(row.region_id)}, "
                f"{int(row.year)}-{int(row.month):02d}")
    response = pd.to_numeric(df[RESPONSE], errors="coerce").to_numpy(float)
    bad_text = np.isnan(response) & df[RESPONSE].notna().to_numpy()
    if bad_text.any():
        row = df.iloc[int(np.argmax(bad_text))]
        raise ValidationError(f"unparseable response {row[RESPONSE]!r} at region "
                              f"{int(row.region_id)}, {int(row.year)}-{int(row.month):02d}")
    neg = response < 0
    if neg.any():
        row = df.iloc[int(np.argmax(neg))]
        raise ValidationError(f"negative response {response[np.argmax(neg)]} at region "
                              f"{int(row.region_id)}, {int(row.year)}-{int(row.month):02d}")

    dup = df.duplicated(list(KEY_COLUMNS))
    if dup.any():
        row = df[dup].iloc[0]
        raise ValidationError(f"duplicate row for region {int(row.region_id)}, "
                              f"{int(row.year)}-{int(row.month):02d}")
    dates = df[["year", "month"]].drop_duplicates().sort_values(["year", "month"])
    years = dates["year"].to_numpy(np.int64)
    months = dates["month"].to_numpy(np.int64)
    if np.any((months < 1) | (months > 12)):
        raise ValidationError(f"{panel_path}: month values must lie in 1..12")
    V, T = len(regions), len(years)
    if len(df) != V * T:
        raise ValidationError(f"{panel_path}: expected {V * T} rows for {V} regions x {T} months, "
                              f"found {len(df)}")

    t_index = pd.MultiIndex.from_arrays([years, months]).get_indexer(
        pd.MultiIndex.from_arrays([df["year"].to_numpy(np.int64), df["month"].to_numpy(np.int64)]))
    v_index = regions.index_of(df["region_id"].to_numpy())
    X = np.empty((V, T, len(covariates)))
    X[v_index, t_index] = df[covariates].to_numpy(float)
    y = np.empty((V, T))
    y[v_index, t_index] = response
    return PanelDataset(regions, years, months, X, y, tuple(covariates))


def ingest(regions_path, panel_path):
    try:
        regions = RegionSet.from_csv(regions_path)
    except (OSError, KeyError) as exc:
        raise ValidationError(f"cannot read {regions_path}: {exc}") from exc
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return read_panel(regions, panel_path)
