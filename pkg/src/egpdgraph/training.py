"""Two-stage maximum-likelihood fitting of the occurrence and spread networks.

Internally every space-time array is laid out ``(T, V)`` (time first), which
is what :class:`~egpdgraph.nn.Network` expects; panels store ``(V, T)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

from egpdgraph.distributions import egpd_logpdf_grad
from egpdgraph.nn import Network, parse_layers

log = logging.getLogger(__name__)

P_CLAMP = 1e-7
KAPPA_INIT = 1.0
XI_INIT = 0.2
TRAIN, VALIDATION = 1, 2


class NumericalError(RuntimeError):
    """Loss or gradient became non-finite during optimisation."""


@dataclass
class TrainConfig:
    learning_rate: float
    epochs: int = 3500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    validation_fraction: float = 0.2
    add_coordinates: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0 <= self.learning_rate:
            raise ValueError("learning rate must be nonnegative")
        for name in ("beta1", "beta2", "validation_fraction"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")

    @classmethod
    def from_dict(cls, record):
        return cls(**{k: v for k, v in record.items() if k in cls.__dataclass_fields__})


# ------------------------------------------------------------------ features

class Standardizer:
    """Per-column affine map to zero mean and unit (population) sd.

    Zero-variance columns are mapped to zero.
    """

    def __init__(self, mean, sd, names=()):
        self.mean = np.asarray(mean, dtype=float)
        self.sd = np.asarray(sd, dtype=float)
        self.names = tuple(names)

    @classmethod
    def fit(cls, features, names=()):
        flat = np.asarray(features, dtype=float).reshape(-1, np.shape(features)[-1])
        if flat.shape[0] < 2:
            raise ValueError("need at least two cells to standardise")
        mean = flat.mean(axis=0)
        sd = flat.std(axis=0)
        # spread below rounding noise of the mean counts as constant
        sd[sd <= 1e-12 * np.maximum(1.0, np.abs(mean))] = 0.0
        degenerate = [n for n, s in zip(names or range(len(sd)), sd) if s == 0]
        if degenerate:
            log.warning("zero-variance predictors mapped to zero: %s", degenerate)
        return cls(mean, sd, names)

    @property
    def degenerate(self):
        return self.sd == 0

    def transform(self, features):
        scale = np.where(self.sd > 0, self.sd, 1.0)
        out = (np.asarray(features, dtype=float) - self.mean) / scale
        return np.where(self.sd > 0, out, 0.0)

    def inverse_transform(self, z):
        return np.asarray(z, dtype=float) * self.sd + self.mean

    def to_dict(self):
        return {"names": list(self.names), "mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, record):
        return cls(record["mean"], record["sd"], record["names"])


def design_features(panel, include_area, add_coordinates=True):
    """Raw predictor array ``(T, V, p)`` and its column names.

    Appends centroid latitude/longitude, year and calendar month when
    ``add_coordinates`` is set, and polygon area when ``include_area`` is.
    """
    V, T = panel.n_regions, panel.n_months
    cols = [panel.X[:, :, k].T for k in range(panel.n_covariates)]
    names = list(panel.covariate_names)
    extra = []
    if add_coordinates:
        extra += [("lat", np.broadcast_to(panel.regions.lat, (T, V))),
                  ("lon", np.broadcast_to(panel.regions.lon, (T, V))),
                  ("year", np.broadcast_to(panel.years[:, None], (T, V))),
                  ("month", np.broadcast_to(panel.months[:, None], (T, V)))]
    if include_area:
        extra.append(("area", np.broadcast_to(panel.regions.area, (T, V))))
    for name, arr in extra:
        if name not in names:
            cols.append(np.asarray(arr, dtype=float))
            names.append(name)
    return np.stack(cols, axis=-1), names


def make_split(observed, fraction=0.2, seed=None):
    """Label observed cells ``TRAIN`` or ``VALIDATION`` uniformly at random.

    Exactly ``round(fraction * n_observed)`` cells go to validation;
    unobserved cells are labelled 0.
    """
    observed = np.asarray(observed, dtype=bool)
    labels = np.zeros(observed.shape, dtype=np.int8)
    idx = np.flatnonzero(observed)
    rng = np.random.default_rng(seed)
    n_val = int(round(fraction * len(idx)))
    perm = rng.permutation(idx)
    labels.flat[perm[:n_val]] = VALIDATION
    labels.flat[perm[n_val:]] = TRAIN
    return labels


# ------------------------------------------------------------------ models

@dataclass
class OccurrenceModel:
    network: Network

    def logit(self, Z, graph):
        return self.network(Z, graph)

    def p0(self, Z, graph):
        return expit(self.logit(Z, graph))


@dataclass
class EgpdModel:
    network: Network
    log_kappa: float = float(np.log(KAPPA_INIT))
    log_xi: float = float(np.log(XI_INIT))

    @property
    def kappa(self):
        return float(np.exp(self.log_kappa))

    @property
    def xi(self):
        return float(np.exp(self.log_xi))

    @property
    def theta(self):
        return np.concatenate([self.network.theta, [self.log_kappa, self.log_xi]])

    def set_theta(self, theta):
        self.network.theta[:] = theta[:-2]
        self.log_kappa, self.log_xi = float(theta[-2]), float(theta[-1])

    def log_rel_scale(self, Z, graph):
        """Network output ``m_sigma``: ``log sigma - log sqrt(area)``."""
        return self.network(Z, graph)

    def sigma(self, Z, graph, sqrt_area):
        return np.asarray(sqrt_area)[None, :] * np.exp(self.log_rel_scale(Z, graph))


# ------------------------------------------------------------------ losses

def _bernoulli_terms(logit, z):
    p = np.clip(expit(logit), P_CLAMP, 1 - P_CLAMP)
    loss = -(z * np.log(p) + (1 - z) * np.log1p(-p))
    # derivative is zero where the clamp is active
    inside = (p > P_CLAMP) & (p < 1 - P_CLAMP)
    dlogit = np.where(inside, p - z, 0.0)
    return loss, dlogit


def bernoulli_nll(model, Z, graph, z, mask):
    """``-sum z log p0 + (1 - z) log(1 - p0)`` over cells in ``mask``.

    The network is evaluated on every cell, so masked-out cells still feed
    graph propagation.
    """
    loss, _ = _bernoulli_terms(model.logit(Z, graph), z)
    return float(loss[mask].sum())


def bernoulli_nll_grad(model, Z, graph, z, mask):
    out, cache = model.network.forward(Z, graph)
    loss, dlogit = _bernoulli_terms(out, z)
    grad = model.network.backward(cache, np.where(mask, dlogit, 0.0), graph)
    return float(loss[mask].sum()), grad


def _check_positive_cells(y, mask):
    vals = np.asarray(y)[mask]
    if np.any(~(vals > 0)):
        raise ValueError("egpd likelihood evaluated on a nonpositive or missing response")


def _egpd_terms(model, m, y, sqrt_area, mask):
    sigma = np.asarray(sqrt_area)[None, :] * np.exp(m)
    lp, dk, ds, dx = egpd_logpdf_grad(y[mask], model.kappa, sigma[mask], model.xi)
    return lp, dk, ds, dx


def egpd_nll(model, Z, graph, y, sqrt_area, mask):
    """``-sum log g(y; kappa, sigma, xi)`` over ``mask``, all responses positive."""
    _check_positive_cells(y, mask)
    m = model.log_rel_scale(Z, graph)
    lp, *_ = _egpd_terms(model, m, y, sqrt_area, mask)
    return float(-lp.sum())


def egpd_nll_grad(model, Z, graph, y, sqrt_area, mask):
    """Loss and gradient w.r.t. ``[network theta, log kappa, log xi]``."""
    _check_positive_cells(y, mask)
    out, cache = model.network.forward(Z, graph)
    lp, dk, ds, dx = _egpd_terms(model, out, y, sqrt_area, mask)
    upstream = np.zeros(out.shape)
    upstream[mask] = -ds
    grad = model.network.backward(cache, upstream, graph)
    return float(-lp.sum()), np.concatenate([grad, [-dk.sum(), -dx.sum()]])


# ------------------------------------------------------------------ optimiser

@dataclass
class AdamResult:
    theta: np.ndarray
    best_epoch: int
    best_val_loss: float
    train_trace: np.ndarray
    val_trace: np.ndarray


def adam_fit(objective, theta0, config):
    """Full-batch Adam keeping the iterate with the lowest validation loss.

    ``objective(theta)`` returns ``(train_loss, grad, val_loss)``. Epoch
    ``e`` records the losses at the parameters in force before its update;
    the returned ``theta`` is the snapshot at the best recorded epoch.
    """
    theta = np.array(theta0, dtype=float)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    train_trace = np.empty(config.epochs)
    val_trace = np.empty(config.epochs)
    best = (np.inf, -1, theta.copy())
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps
    for epoch in range(config.epochs):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            train_loss, grad, val_loss = objective(theta)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss) and np.all(np.isfinite(grad))):
            raise NumericalError(f"non-finite loss or gradient at epoch {epoch} "
                                 f"(train={train_loss}, validation={val_loss})")
        train_trace[epoch] = train_loss
        val_trace[epoch] = val_loss
        if val_loss < best[0]:
            best = (val_loss, epoch, theta.copy())
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        m_hat = m / (1 - b1 ** (epoch + 1))
        v_hat = v / (1 - b2 ** (epoch + 1))
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return AdamResult(best[2], best[1], best[0], train_trace, val_trace)


# ------------------------------------------------------------------ stages

def _split_masks(labels_tv):
    return labels_tv == TRAIN, labels_tv == VALIDATION


def fit_occurrence(Z, graph, z, labels_tv, layers, config, seed):
    model = OccurrenceModel(Network(layers, Z.shape[-1], seed=seed))
    train, val = _split_masks(labels_tv)

    def objective(theta):
        model.network.theta[:] = theta
        out, cache = model.network.forward(Z, graph)
        loss, dlogit = _bernoulli_terms(out, z)
        grad = model.network.backward(cache, np.where(train, dlogit, 0.0), graph)
        return float(loss[train].sum()), grad, float(loss[val].sum())

    result = adam_fit(objective, model.network.theta.copy(), config)
    model.network.theta[:] = result.theta
    return model, result


def fit_egpd(Z, graph, y, sqrt_area, labels_tv, layers, config, seed):
    pos = np.nan_to_num(y) > 0
    train, val = _split_masks(labels_tv)
    train, val = train & pos, val & pos
    if not train.any():
        raise ValueError("no positive responses in the training set; "
                         "the spread model has an empty likelihood")
    model = EgpdModel(Network(layers, Z.shape[-1], seed=seed))
    y_pos = np.where(pos, y, 1.0)

    def objective(theta):
        model.set_theta(theta)
        out, cache = model.network.forward(Z, graph)
        sigma = np.asarray(sqrt_area)[None, :] * np.exp(out)
        lp, dk, ds, dx = egpd_logpdf_grad(y_pos, model.kappa, sigma, model.xi)
        upstream = np.where(train, -ds, 0.0)
        grad = model.network.backward(cache, upstream, graph)
        grad = np.concatenate([grad, [-dk[train].sum(), -dx[train].sum()]])
        return float(-lp[train].sum()), grad, float(-lp[val].sum())

    result = adam_fit(objective, model.theta, config)
    model.set_theta(result.theta)
    return model, result


@dataclass
class TwoStageFit:
    occurrence: OccurrenceModel
    egpd: EgpdModel
    occ_standardizer: Standardizer
    egpd_standardizer: Standardizer
    labels: np.ndarray            # (V, T) split labels
    occ_result: AdamResult
    egpd_result: AdamResult
    config: TrainConfig
    seed: int
    metadata: dict = field(default_factory=dict)

    @property
    def kappa(self):
        return self.egpd.kappa

    @property
    def xi(self):
        return self.egpd.xi

    def inputs(self, panel):
        """Standardised occurrence and spread inputs, each ``(T, V, p)``."""
        occ_raw, _ = design_features(panel, True, self.config.add_coordinates)
        egpd_raw, _ = design_features(panel, False, self.config.add_coordinates)
        return self.occ_standardizer.transform(occ_raw), self.egpd_standardizer.transform(egpd_raw)

    def predict(self, panel, graph):
        """``(p0, sigma, m_sigma)`` arrays, each ``(V, T)``."""
        Zo, Ze = self.inputs(panel)
        p0 = self.occurrence.p0(Zo, graph).T
        m = self.egpd.log_rel_scale(Ze, graph).T
        sigma = panel.regions.sqrt_area[:, None] * np.exp(m)
        return p0, sigma, m

    # -------------------------------------------------------------- io

    ARTIFACTS = ("standardizer.json", "occurrence_model.json", "spread_model.json",
                 "loss_traces.csv", "run_metadata.json")

    def save(self, out_dir, extra_metadata=None):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "standardizer.json").write_text(json.dumps(
            {"occurrence": self.occ_standardizer.to_dict(),
             "spread": self.egpd_standardizer.to_dict()}, indent=1))
        (out / "occurrence_model.json").write_text(json.dumps(
            {"network": self.occurrence.network.to_dict()}))
        (out / "spread_model.json").write_text(json.dumps(
            {"network": self.egpd.network.to_dict(), "log_kappa": self.egpd.log_kappa,
             "log_xi": self.egpd.log_xi, "kappa": self.kappa, "xi": self.xi}))
        pd.DataFrame({
            "epoch": np.arange(self.config.epochs),
            "train_occ": self.occ_result.train_trace, "val_occ": self.occ_result.val_trace,
            "train_egpd": self.egpd_result.train_trace, "val_egpd": self.egpd_result.val_trace,
        }).to_csv(out / "loss_traces.csv", index=False, float_format="%.17g")
        meta = {
            "seed": self.seed,
            "train_config": asdict(self.config),
            "best_epoch_occ": self.occ_result.best_epoch,
            "best_val_loss_occ": self.occ_result.best_val_loss,
            "best_epoch_egpd": self.egpd_result.best_epoch,
            "best_val_loss_egpd": self.egpd_result.best_val_loss,
            "kappa": self.kappa,
            "xi": self.xi,
            "occurrence_layers": [s.to_dict() for s in self.occurrence.network.specs],
            "spread_layers": [s.to_dict() for s in self.egpd.network.specs],
            **self.metadata,
            **(extra_metadata or {}),
        }
        (out / "run_metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, out_dir, panel=None):
        out = Path(out_dir)
        missing = [str(out / a) for a in cls.ARTIFACTS if not (out / a).exists()]
        if missing:
            raise FileNotFoundError("missing fit artifacts: " + ", ".join(missing))
        std = json.loads((out / "standardizer.json").read_text())
        occ = json.loads((out / "occurrence_model.json").read_text())
        spr = json.loads((out / "spread_model.json").read_text())
        meta = json.loads((out / "run_metadata.json").read_text())
        traces = pd.read_csv(out / "loss_traces.csv", float_precision="round_trip")
        config = TrainConfig.from_dict(meta["train_config"])
        occ_res = AdamResult(None, meta["best_epoch_occ"], meta["best_val_loss_occ"],
                             traces["train_occ"].to_numpy(), traces["val_occ"].to_numpy())
        egpd_res = AdamResult(None, meta["best_epoch_egpd"], meta["best_val_loss_egpd"],
                              traces["train_egpd"].to_numpy(), traces["val_egpd"].to_numpy())
        labels = None
        if panel is not None:
            labels = make_split(panel.observed, config.validation_fraction,
                                _stage_seeds(meta["seed"])[0])
        return cls(
            OccurrenceModel(Network.from_dict(occ["network"])),
            EgpdModel(Network.from_dict(spr["network"]), spr["log_kappa"], spr["log_xi"]),
            Standardizer.from_dict(std["occurrence"]), Standardizer.from_dict(std["spread"]),
            labels, occ_res, egpd_res, config, meta["seed"],
            {k: v for k, v in meta.items() if k not in ("seed", "train_config")},
        )


def _stage_seeds(seed):
    split, occ, egpd = np.random.SeedSequence(seed).spawn(3)
    return split, occ, egpd


def fit_two_stage(panel, graph, occ_layers, egpd_layers, config, seed=0):
    """Fit the occurrence network, then the eGPD spread network, on one shared split.

    The occurrence inputs include polygon area as a predictor; the spread
    scale carries ``sqrt(area)`` as an offset instead.
    """
    split_seed, occ_seed, egpd_seed = _stage_seeds(seed)
    labels = make_split(panel.observed, config.validation_fraction, split_seed)
    labels_tv = labels.T
    if not (panel.positive & (labels == TRAIN)).any():
        raise ValueError("panel has no positive responses in the training set; "
                         "the spread model has an empty likelihood")

    occ_raw, occ_names = design_features(panel, True, config.add_coordinates)
    egpd_raw, egpd_names = design_features(panel, False, config.add_coordinates)
    occ_std = Standardizer.fit(occ_raw, occ_names)
    egpd_std = Standardizer.fit(egpd_raw, egpd_names)
    Zo, Ze = occ_std.transform(occ_raw), egpd_std.transform(egpd_raw)

    y_tv = panel.y.T
    z = (np.nan_to_num(y_tv) > 0).astype(float)
    occ_model, occ_res = fit_occurrence(Zo, graph, z, labels_tv, parse_layers(occ_layers),
                                        config, occ_seed)
    log.info("occurrence stage: best validation loss %.6g at epoch %d",
             occ_res.best_val_loss, occ_res.best_epoch)
    egpd_model, egpd_res = fit_egpd(Ze, graph, y_tv, panel.regions.sqrt_area, labels_tv,
                                    parse_layers(egpd_layers), config, egpd_seed)
    log.info("spread stage: best validation loss %.6g at epoch %d, kappa=%.4f xi=%.4f",
             egpd_res.best_val_loss, egpd_res.best_epoch, egpd_model.kappa, egpd_model.xi)
    return TwoStageFit(occ_model, egpd_model, occ_std, egpd_std, labels, occ_res, egpd_res,
                       config, int(seed), {"occurrence_features": occ_names,
                                           "spread_features": egpd_names})
