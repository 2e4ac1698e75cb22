"""Region lattice as a weighted graph with a distance-kernel adjacency."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import sparse

from egpdgraph import _backend

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class RegionSet:
    """Regions reduced to centroid and area.

    ``ids`` are the external identifiers; internal index ``k`` refers to
    ``ids[k]``.
    """
    ids: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    area: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        if n < 1:
            raise ValueError("a RegionSet needs at least one region")
        for name in ("lat", "lon", "area"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if len(np.unique(self.ids)) != n:
            raise ValueError("region ids must be unique")
        if np.any(~(np.asarray(self.area) > 0)):
            raise ValueError("region areas must be strictly positive")
        _check_coords(self.lat, self.lon)

    def __len__(self):
        return len(self.ids)

    @property
    def sqrt_area(self):
        return np.sqrt(self.area)

    def index_of(self, ids):
        lookup = {int(r): k for k, r in enumerate(self.ids)}
        return np.array([lookup[int(r)] for r in ids], dtype=np.int64)

    @classmethod
    def from_csv(cls, path):
        df = pd.read_csv(path, float_precision="round_trip")
        missing = {"id", "lat", "lon", "area_km2"} - set(df.columns)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        df = df.sort_values("id", kind="stable")
        ids = df["id"].to_numpy(dtype=np.int64)
        if not np.array_equal(ids, np.arange(ids[0], ids[0] + len(ids))):
            raise ValueError(f"{path}: region ids must be unique and contiguous")
        return cls(ids, df["lat"].to_numpy(float), df["lon"].to_numpy(float),
                   df["area_km2"].to_numpy(float))

    def to_csv(self, path):
        pd.DataFrame({"id": self.ids, "lat": self.lat, "lon": self.lon,
                      "area_km2": self.area}).to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True)
class AdjacencySpec:
    lam: float
    alpha: int
    delta: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.alpha not in (1, 2):
            raise ValueError("alpha must be 1 or 2")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")


@dataclass(frozen=True)
class WeightedGraph:
    """Symmetric adjacency ``A`` (zero diagonal) with its normalised form."""
    A: sparse.csr_matrix
    A_norm: sparse.csr_matrix
    degrees: np.ndarray
    _csr: tuple = field(repr=False, compare=False, default=None)

    @property
    def n_nodes(self):
        return self.A.shape[0]

    def propagate(self, M):
        """Compute ``A_norm @ M`` for ``M`` of shape ``(V, k)``."""
        indptr, indices, data = self._csr
        return _backend.csr_matmat(indptr, indices, data, np.ascontiguousarray(M, dtype=float))

    def triplets(self):
        coo = self.A.tocoo()
        return coo.row, coo.col, coo.data

    def to_csv(self, path, ids=None):
        i, j, w = self.triplets()
        if ids is not None:
            i, j = np.asarray(ids)[i], np.asarray(ids)[j]
        pd.DataFrame({"i": i, "j": j, "weight": w}).to_csv(path, index=False, float_format="%.17g")


def _check_coords(lat, lon):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if np.any(~((lat >= -90) & (lat <= 90))) or np.any(~((lon >= -180) & (lon <= 180))):
        raise ValueError("latitude must lie in [-90, 90] and longitude in [-180, 180]")


def great_circle(lat1, lon1, lat2, lon2, radius=EARTH_RADIUS_KM):
    """Haversine distance in km between points given in degrees."""
    _check_coords(lat1, lon1)
    _check_coords(lat2, lon2)
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float))
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2) ** 2
    return 2 * radius * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def kernel_weight(h, spec):
    return np.exp(-(np.asarray(h, dtype=float) / spec.lam) ** spec.alpha)


def build_adjacency(regions, spec, chunk=512):
    """Kernel adjacency ``exp(-(h/lam)^alpha)`` for pairs within ``delta`` km."""
    n = len(regions)
    rows, cols, vals = [], [], []
    if spec.delta > 0:
        lat, lon = np.asarray(regions.lat, float), np.asarray(regions.lon, float)
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            h = great_circle(lat[start:stop, None], lon[start:stop, None], lat[None, :], lon[None, :])
            r, c = np.nonzero(h <= spec.delta)
            r = r + start
            # upper triangle only, mirrored below, so A is exactly symmetric
            keep = r < c
            r, c = r[keep], c[keep]
            rows.append(r)
            cols.append(c)
            vals.append(kernel_weight(h[r - start, c], spec))
    if rows:
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        r = c = np.empty(0, dtype=np.int64)
        v = np.empty(0)
    A = sparse.csr_matrix((np.concatenate([v, v]), (np.concatenate([r, c]), np.concatenate([c, r]))),
                          shape=(n, n))
    return graph_from_adjacency(A)


def normalize(A):
    """``D^{-1/2} A D^{-1/2}``; rows/columns of zero-degree vertices stay zero."""
    is_sparse = sparse.issparse(A)
    A = sparse.csr_matrix(A, dtype=float)
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    pos = deg > 0
    inv_sqrt[pos] = 1.0 / np.sqrt(deg[pos])
    Dm = sparse.diags(inv_sqrt)
    out = (Dm @ A @ Dm).tocsr()
    out.sort_indices()
    return out if is_sparse else out.toarray()


def graph_from_adjacency(A):
    """Wrap a symmetric nonnegative zero-diagonal matrix as a :class:`WeightedGraph`."""
    A = sparse.csr_matrix(A, dtype=float)
    A.eliminate_zeros()
    A.sort_indices()
    if A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be square")
    if np.any(A.diagonal() != 0):
        raise ValueError("adjacency must have a zero diagonal")
    if A.nnz and A.data.min() < 0:
        raise ValueError("adjacency weights must be nonnegative")
    if abs(A - A.T).sum() != 0:
        raise ValueError("adjacency must be symmetric")
    A_norm = normalize(A)
    # exact symmetry of the normalised matrix
    A_norm = ((A_norm + A_norm.T) * 0.5).tocsr()
    A_norm.sort_indices()
    deg = np.asarray(A.sum(axis=1)).ravel()
    csr = (A_norm.indptr.astype(np.int32), A_norm.indices.astype(np.int32),
           A_norm.data.astype(np.float64))
    return WeightedGraph(A, A_norm, deg, csr)


def empty_graph(n):
    return graph_from_adjacency(sparse.csr_matrix((n, n)))
