"""Command-line front end.

Every command reads one JSON run configuration (``--config``) whose relative
paths are resolved against the configuration file's directory::

    {
      "regions": "regions.csv",
      "panel": "panel.csv",
      "adjacency": {"lambda": 650, "alpha": 2, "delta": 700},
      "occurrence": {"layers": [{"kind": "graph_skip", "width": 8}]},
      "spread": {"layers": [{"kind": "graph_skip", "width": 8}]},
      "train": {"learning_rate": 0.01, "epochs": 3500},
      "bootstrap": {"block_size": 2, "replicates": 250},
      "grid": {"lambda": [650], "alpha": [2], "delta": [0, 700], "learning_rate": [0.01]},
      "seed": 0,
      "out": "run"
    }

``simulate`` instead takes a truth configuration (see
:class:`egpdgraph.simulate.TruthConfig`); without ``--config`` it uses the
defaults.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from egpdgraph import __version__
from egpdgraph.attribution import TARGETS, attribute, pooled_matrix, rank_covariates
from egpdgraph.bootstrap import BootstrapConfig, bootstrap_fit, format_summary
from egpdgraph.data import ValidationError, ingest
from egpdgraph.evaluation import (TwcrpsScheme, auc, band_coverage, hazard_metrics, pit,
                                  qq_table, score_fit, spatial_mean_series, trend)
from egpdgraph.graph import AdjacencySpec, build_adjacency
from egpdgraph.simulate import TruthConfig, simulate
from egpdgraph.training import (VALIDATION, NumericalError, TrainConfig, TwoStageFit, egpd_nll,
                                fit_two_stage)

log = logging.getLogger("egpdgraph")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2
FLOAT = "%.17g"


# ---------------------------------------------------------------- configuration

class RunConfig:
    def __init__(self, record, base_dir=Path("."), seed=None, out=None):
        self.record = record
        self.base = Path(base_dir)
        self.seed = int(seed if seed is not None else record.get("seed", 0))
        # --out is taken relative to the working directory, the config's "out"
        # relative to the config file
        if out is not None:
            self.out = Path(out)
        elif record.get("out") is not None:
            self.out = self._path(record["out"])
        else:
            raise ValidationError("no output directory: pass --out or set 'out' in the config")

    @classmethod
    def load(cls, path, seed=None, out=None):
        path = Path(path)
        try:
            record = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        return cls(record, path.parent, seed, Path(out) if out is not None else None)

    def _path(self, value):
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    def require(self, key):
        if key not in self.record:
            raise ValidationError(f"config is missing required key {key!r}")
        return self.record[key]

    def panel(self):
        return ingest(self._path(self.require("regions")), self._path(self.require("panel")))

    def adjacency(self):
        adj = self.require("adjacency")
        try:
            return AdjacencySpec(float(adj["lambda"]), int(adj["alpha"]), float(adj["delta"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad adjacency config {adj!r}: {exc}") from exc

    def layers(self, stage):
        return self.require(stage).get("layers", [])

    def train(self):
        record = self.require("train")
        if "learning_rate" not in record:
            raise ValidationError("train.learning_rate is required")
        try:
            return TrainConfig.from_dict(record)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad train config: {exc}") from exc

    def bootstrap(self, replicates=None):
        record = dict(self.record.get("bootstrap", {}))
        if replicates is not None:
            record["replicates"] = replicates
        record.setdefault("seed", self.seed)
        try:
            return BootstrapConfig.from_dict(record)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad bootstrap config: {exc}") from exc


def _write_json(path, record):
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _write_csv(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT)


def _load_fit(out, panel):
    try:
        return TwoStageFit.load(out, panel)
    except FileNotFoundError as exc:
        raise ValidationError(f"{exc}; run 'egpdgraph fit' first") from exc


def _month_index(args, panel):
    if args.month is None:
        return None
    if not 1 <= args.month <= panel.n_months:
        raise ValidationError(f"--month must lie in 1..{panel.n_months}")
    return args.month - 1


# ---------------------------------------------------------------- commands

def cmd_simulate(args):
    record = {}
    if args.config:
        try:
            record = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read truth config {args.config}: {exc}") from exc
    seed = args.seed if args.seed is not None else int(record.get("seed", 0))
    if args.out is None:
        raise ValidationError("simulate needs --out")
    try:
        truth = TruthConfig.from_dict(record)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad truth config: {exc}") from exc
    sim = simulate(truth, seed)
    out = Path(args.out)
    sim.save(out)
    log.info("simulated %d regions x %d months into %s", truth.n_regions, truth.n_months, out)
    return sim.panel.summary()


def cmd_ingest_check(args):
    cfg = RunConfig.load(args.config, args.seed, args.out or ".")
    summary = cfg.panel().summary()
    print(json.dumps(summary, indent=2))
    return summary


def _fit_and_save(cfg, panel, graph, spec, train_cfg, out, seed):
    fit = fit_two_stage(panel, graph, cfg.layers("occurrence"), cfg.layers("spread"), train_cfg, seed)
    fit.save(out, {"adjacency": {"lambda": spec.lam, "alpha": spec.alpha, "delta": spec.delta},
                   "n_edges": int(graph.A.nnz // 2), "version": __version__})
    return fit


def cmd_fit(args):
    cfg = RunConfig.load(args.config, args.seed, args.out)
    panel = cfg.panel()
    spec = cfg.adjacency()
    graph = build_adjacency(panel.regions, spec)
    fit = _fit_and_save(cfg, panel, graph, spec, cfg.train(), cfg.out, cfg.seed)
    _write_json(cfg.out / "config.json", cfg.record)
    (cfg.out / "created.txt").write_text(datetime.now(timezone.utc).isoformat() + "\n")
    log.info("fit written to %s (kappa=%.4f, xi=%.4f)", cfg.out, fit.kappa, fit.xi)
    return fit


def _replicate_dirs(out):
    root = Path(out) / "replicates"
    return sorted(p for p in root.glob("rep_*") if p.is_dir()) if root.exists() else []


def cmd_evaluate(args):
    cfg = RunConfig.load(args.config, args.seed, args.out)
    panel = cfg.panel()
    graph = build_adjacency(panel.regions, cfg.adjacency())
    fit = _load_fit(cfg.out, panel)
    scheme = TwcrpsScheme(**cfg.record.get("twcrps", {}))
    rows = [dict(r, replicate="point") for r in score_fit(fit, graph, panel, scheme)]

    _, sigma, _ = fit.predict(panel, graph)
    pos = panel.positive
    u = pit(panel.y[pos], fit.kappa, sigma[pos], fit.xi)
    rep_u = []
    for rep_dir in _replicate_dirs(cfg.out):
        months = json.loads((rep_dir / "run_metadata.json").read_text())["bootstrap_months"]
        rep_panel = panel.select_months(months)
        rep_fit = TwoStageFit.load(rep_dir, rep_panel)
        _, rs, _ = rep_fit.predict(rep_panel, graph)
        rpos = rep_panel.positive
        rep_u.append(pit(rep_panel.y[rpos], rep_fit.kappa, rs[rpos], rep_fit.xi))
        idx = int(rep_dir.name.split("_")[1])
        rows += [dict(r, replicate=idx) for r in score_fit(rep_fit, graph, rep_panel, scheme,
                                                              subsets=("validation",))]
    _write_csv(pd.DataFrame(rows, columns=["metric", "value", "replicate"]), cfg.out / "scores.csv")
    coverage = {}
    for margin in ("exponential", "gaussian"):
        table = qq_table(u, margin, rep_u)
        _write_csv(table, cfg.out / f"qq_{margin}.csv")
        coverage[margin] = band_coverage(table) if rep_u else None
    _write_json(cfg.out / "evaluation_metadata.json",
                {"twcrps_scheme": scheme.to_dict(), "pit_clamp": 1e-12,
                 "plotting_positions": "i/(n+1)", "bootstrap_replicates": len(rep_u),
                 "qq_band_coverage": coverage})
    return rows


def cmd_hazard(args):
    cfg = RunConfig.load(args.config, args.seed, args.out)
    panel = cfg.panel()
    graph = build_adjacency(panel.regions, cfg.adjacency())
    fit = _load_fit(cfg.out, panel)
    month = _month_index(args, panel)
    table = hazard_metrics(fit, graph, panel, month)
    _write_csv(table, cfg.out / "hazard.csv")

    full = table if month is None else hazard_metrics(fit, graph, panel)
    V, T = panel.n_regions, panel.n_months
    trends = []
    for metric in ("p0", "log_rel_severity", "ch"):
        series = spatial_mean_series(full[metric].to_numpy().reshape(V, T), panel.observed)
        ok = ~np.isnan(series)
        line = trend(series[ok], np.arange(1, T + 1)[ok])
        trends.append({"metric": metric, "slope": line.slope, "intercept": line.intercept,
                       "slope_se": line.slope_se})
    _write_csv(pd.DataFrame(trends), cfg.out / "trends.csv")
    return table


def cmd_bootstrap(args):
    cfg = RunConfig.load(args.config, args.seed, args.out)
    panel = cfg.panel()
    spec = cfg.adjacency()
    graph = build_adjacency(panel.regions, spec)
    boot_cfg = cfg.bootstrap(args.replicates)
    result = bootstrap_fit(panel, graph, cfg.layers("occurrence"), cfg.layers("spread"),
                           boot_cfg, cfg.train())
    for rep in result.replicates:
        if rep.ok:
            rep.fit.save(cfg.out / "replicates" / f"rep_{rep.index:04d}")
    table = pd.DataFrame(result.rows())
    summary = {"replicate": "summary"}
    for col in ("kappa", "xi", "val_loss_occ", "val_loss_egpd"):
        summary[col] = format_summary(table[col]) if table[col].notna().any() else "NA"
    out = pd.concat([table.astype({"replicate": object}), pd.DataFrame([summary])], ignore_index=True)
    out.to_csv(cfg.out / "replicates.csv", index=False, float_format=FLOAT)
    failures = [{"replicate": r.index, "error": r.error} for r in result.failures]
    _write_json(cfg.out / "bootstrap_metadata.json",
                {"block_size": boot_cfg.block_size, "replicates": boot_cfg.replicates,
                 "seed": boot_cfg.seed, "failures": failures})
    if failures:
        log.warning("%d replicate(s) failed; see bootstrap_metadata.json", len(failures))
    return result


def cmd_attribute(args):
    cfg = RunConfig.load(args.config, args.seed, args.out)
    panel = cfg.panel()
    graph = build_adjacency(panel.regions, cfg.adjacency())
    fit = _load_fit(cfg.out, panel)
    month = _month_index(args, panel)
    tables, rankings = [], []
    for target in TARGETS:
        tab = attribute(fit, graph, panel, target, month)
        names = list(dict.fromkeys(tab["covariate"]))
        ranked = rank_covariates(pooled_matrix(tab, names), names)
        ranked.insert(1, "target", target)
        tables.append(tab)
        rankings.append(ranked[["covariate", "target", "iqr", "rank"]])
    _write_csv(pd.concat(tables, ignore_index=True), cfg.out / "attribution_scores.csv")
    ranking = pd.concat(rankings, ignore_index=True)
    _write_csv(ranking, cfg.out / "attribution_ranking.csv")
    _write_json(cfg.out / "attribution_metadata.json",
                {"reference": "standardised covariates at zero (marginal means)",
                 "sigma_scale": "log link (spread network output)",
                 "dispersion": "interquartile range"})
    return ranking


def _validation_scores(fit, graph, panel):
    p0, _, _ = fit.predict(panel, graph)
    val = fit.labels == VALIDATION
    val_auc = auc(panel.positive[val], p0[val])
    _, Ze = fit.inputs(panel)
    pos = (val & panel.positive).T
    nll = egpd_nll(fit.egpd, Ze, graph, panel.y.T, panel.regions.sqrt_area, pos)
    return val_auc, nll


def cmd_grid(args):
    cfg = RunConfig.load(args.config, args.seed, args.out)
    panel = cfg.panel()
    grid = cfg.require("grid")
    base_adj = cfg.record.get("adjacency", {})
    base_train = cfg.record.get("train", {})
    axes = {
        "lambda": grid.get("lambda", [base_adj.get("lambda")]),
        "alpha": grid.get("alpha", [base_adj.get("alpha")]),
        "delta": grid.get("delta", [base_adj.get("delta")]),
        "learning_rate": grid.get("learning_rate", [base_train.get("learning_rate")]),
    }
    for key, values in axes.items():
        if not values or any(v is None for v in values):
            raise ValidationError(f"grid axis {key!r} is empty and has no base value")
    rows = []
    for k, (lam, alpha, delta, lr) in enumerate(itertools.product(*axes.values())):
        spec = AdjacencySpec(float(lam), int(alpha), float(delta))
        graph = build_adjacency(panel.regions, spec)
        train_cfg = TrainConfig.from_dict({**base_train, "learning_rate": lr})
        run_dir = cfg.out / "grid" / f"run_{k:03d}"
        fit = _fit_and_save(cfg, panel, graph, spec, train_cfg, run_dir, cfg.seed)
        val_auc, val_nll = _validation_scores(fit, graph, panel)
        rows.append({"run": k, "lambda": spec.lam, "alpha": spec.alpha, "delta": spec.delta,
                     "learning_rate": float(lr), "n_edges": int(graph.A.nnz // 2),
                     "val_auc": val_auc, "val_nll_egpd": val_nll,
                     "val_loss_occ": fit.occ_result.best_val_loss})
        log.info("grid run %d: lambda=%g alpha=%d delta=%g lr=%g auc=%.4f nll=%.4f",
                 k, spec.lam, spec.alpha, spec.delta, lr, val_auc, val_nll)
    table = pd.DataFrame(rows)
    _write_csv(table, cfg.out / "grid.csv")
    occ_best = int(table["val_auc"].to_numpy().argmax())
    spr_best = int(table["val_nll_egpd"].to_numpy().argmin())
    best = {"occurrence": rows[occ_best], "spread": rows[spr_best],
            "criteria": {"occurrence": "max val_auc", "spread": "min val_nll_egpd"}}
    _write_json(cfg.out / "best.json", best)
    return table, best


COMMANDS = {
    "simulate": (cmd_simulate, "draw a synthetic panel from a truth configuration"),
    "ingest-check": (cmd_ingest_check, "validate input files and print a summary"),
    "fit": (cmd_fit, "fit the two-stage model and write its artifacts"),
    "evaluate": (cmd_evaluate, "score a fitted model and export Q-Q tables"),
    "hazard": (cmd_hazard, "export p0, relative severity and compound hazard"),
    "bootstrap": (cmd_bootstrap, "refit on stationary-bootstrap resamples"),
    "attribute": (cmd_attribute, "contribution scores and covariate ranking"),
    "grid": (cmd_grid, "hyperparameter grid over adjacency and learning rate"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="egpdgraph", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=name != "simulate", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "bootstrap":
            p.add_argument("--replicates", type=int, help="number of bootstrap replicates")
        if name in ("hazard", "attribute"):
            p.add_argument("--month", type=int, help="one-based month index (default: all)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
