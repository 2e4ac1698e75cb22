"""Stationary bootstrap over whole-domain month slices."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from egpdgraph import _backend
from egpdgraph.training import NumericalError, fit_two_stage

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BootstrapConfig:
    block_size: float = 2.0
    replicates: int = 250
    seed: int = 0

    def __post_init__(self):
        if not self.block_size >= 1:
            raise ValueError(f"expected block size must be >= 1, got {self.block_size}")
        if int(self.replicates) < 1:
            raise ValueError(f"replicate count must be >= 1, got {self.replicates}")

    @classmethod
    def from_dict(cls, record):
        return cls(**{k: v for k, v in record.items() if k in cls.__dataclass_fields__})


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def draw_block_lengths(n, block_size, rng):
    """Geometric block lengths on {1, 2, ...} with mean ``block_size``."""
    return _rng(rng).geometric(1.0 / block_size, size=n).astype(np.int64)


def stationary_resample(n_months, block_size, rng=None):
    """Zero-based month indices of one stationary-bootstrap sample of length ``n_months``.

    Each block starts at a uniform month and runs for a geometric number of
    months; a block that passes the last month continues from the first.
    ``n_months`` blocks always suffice since every block has length >= 1.
    """
    if n_months < 1:
        raise ValueError("need at least one month")
    rng = _rng(rng)
    starts = rng.integers(0, n_months, size=n_months).astype(np.int64)
    lengths = draw_block_lengths(n_months, block_size, rng)
    return _backend.stationary_fill(starts, lengths, n_months)


def replicate_seed(seed, b):
    """Independent stream for replicate ``b``; does not depend on other replicates."""
    return np.random.SeedSequence(seed, spawn_key=(b,))


@dataclass
class Replicate:
    index: int
    months: np.ndarray
    fit: object = None
    error: str | None = None

    @property
    def ok(self):
        return self.error is None

    def row(self):
        if not self.ok:
            return {"replicate": self.index, "kappa": np.nan, "xi": np.nan,
                    "val_loss_occ": np.nan, "val_loss_egpd": np.nan}
        return {"replicate": self.index, "kappa": self.fit.kappa, "xi": self.fit.xi,
                "val_loss_occ": self.fit.occ_result.best_val_loss,
                "val_loss_egpd": self.fit.egpd_result.best_val_loss}


@dataclass
class BootstrapResult:
    replicates: list = field(default_factory=list)

    @property
    def failures(self):
        return [r for r in self.replicates if not r.ok]

    @property
    def fits(self):
        return [r.fit for r in self.replicates if r.ok]

    def rows(self):
        return [r.row() for r in self.replicates]


def run_replicate(panel, graph, occ_layers, egpd_layers, cfg, train_cfg, b):
    ss = replicate_seed(cfg.seed, b)
    resample_ss, fit_ss = ss.spawn(2)
    months = stationary_resample(panel.n_months, cfg.block_size, np.random.default_rng(resample_ss))
    fit_seed = int(fit_ss.generate_state(1)[0])
    try:
        fit = fit_two_stage(panel.select_months(months), graph, occ_layers, egpd_layers,
                            train_cfg, seed=fit_seed)
    except (NumericalError, ValueError, FloatingPointError) as exc:
        log.warning("bootstrap replicate %d failed: %s", b, exc)
        return Replicate(b, months, None, f"{type(exc).__name__}: {exc}")
    fit.metadata["bootstrap_months"] = months.tolist()
    return Replicate(b, months, fit)


def bootstrap_fit(panel, graph, occ_layers, egpd_layers, cfg, train_cfg, workers=1):
    """Refit the two-stage model on ``cfg.replicates`` stationary-bootstrap panels.

    Results are returned in replicate order. Failed replicates stay in the
    list with their error message.
    """
    args = (panel, graph, occ_layers, egpd_layers, cfg, train_cfg)
    if workers <= 1:
        reps = [run_replicate(*args, b) for b in range(cfg.replicates)]
    else:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(run_replicate, *args, b) for b in range(cfg.replicates)]
            reps = [f.result() for f in futures]
    result = BootstrapResult(reps)
    if result.failures:
        log.warning("%d of %d bootstrap replicates failed", len(result.failures), len(reps))
    return result


def summarize_replicates(values):
    """``(q2.5, median, q97.5)`` with linear interpolation between order statistics."""
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        raise ValueError("no replicate values to summarise")
    lo, med, hi = np.quantile(v, [0.025, 0.5, 0.975])
    return float(lo), float(med), float(hi)


def format_summary(values, digits=3):
    lo, med, hi = summarize_replicates(values)
    return f"{med:.{digits}f} ({lo:.{digits}f}, {hi:.{digits}f})"
