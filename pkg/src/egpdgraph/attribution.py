"""Gradient-ratio contribution scores and covariate ranking.

For covariate ``i`` at cell ``(s, t)`` the score is::

    CS = x_i * g(x*) / (g(x*) - g(0))

where ``x`` is the standardised input (so the reference ``0`` is the
covariate mean) and ``g`` is the derivative of the target at ``s`` with
respect to the same region's own input ``x_i(s, t)``. When the denominator
vanishes (locally linear response) the score falls back to ``x_i * g(x*)``.

The target is either ``p0`` (probability scale) or the spread network output
``m_sigma`` (the log-link scale of sigma).
"""
from __future__ import annotations

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.special import expit

TARGETS = ("p0", "sigma")
FALLBACK_RTOL = 1e-10


def receptive_hops(network):
    return sum(spec.kind == "graph_skip" for spec in network.specs)


def distance_colouring(graph, hops):
    """Greedy colouring in which nodes within ``hops`` graph steps get distinct colours."""
    if graph is None or hops == 0 or graph.A.nnz == 0:
        n = 1 if graph is None else graph.n_nodes
        return np.zeros(n, dtype=np.int64)
    B = (graph.A != 0).astype(np.int8).tocsr()
    reach = sparse.identity(graph.n_nodes, dtype=np.int8, format="csr")
    for _ in range(hops):
        reach = ((reach + reach @ B) != 0).astype(np.int8)
    reach = reach.tocsr()
    colours = np.full(graph.n_nodes, -1, dtype=np.int64)
    for v in range(graph.n_nodes):
        taken = colours[reach.indices[reach.indptr[v]:reach.indptr[v + 1]]]
        free = np.ones(len(taken) + 1, dtype=bool)
        free[taken[(taken >= 0) & (taken < len(free))]] = False
        colours[v] = int(np.argmax(free))
    return colours


def _link_derivative(out, target):
    if target == "p0":
        p = expit(out)
        return p * (1.0 - p)
    if target == "sigma":
        return np.ones_like(out)
    raise ValueError(f"unknown target {target!r}; use one of {TARGETS}")


def local_gradients(network, graph, x, target, colours=None):
    """``G[s, i] = d target(s) / d x_i(s)`` for one month slice ``x`` of shape ``(V, d)``.

    Nodes sharing a colour cannot influence each other's outputs, so one
    backward pass per colour (batched along the leading axis) recovers the
    diagonal blocks of the input Jacobian exactly.
    """
    x = np.asarray(x, dtype=float)
    if colours is None:
        colours = distance_colouring(graph, receptive_hops(network))
    if graph is None:
        colours = np.zeros(x.shape[0], dtype=np.int64)
    n_col = int(colours.max()) + 1
    X = np.broadcast_to(x, (n_col, *x.shape))
    out, cache = network.forward(X, graph)
    seed = (colours[None, :] == np.arange(n_col)[:, None]) * _link_derivative(out, target)
    _, dx = network.backward(cache, seed, graph, need_input_grad=True)
    return dx[colours, np.arange(x.shape[0])]


def contribution_scores(network, graph, x, target, colours=None):
    """Scores of shape ``(V, d)`` for one standardised month slice."""
    if colours is None:
        colours = distance_colouring(graph, receptive_hops(network))
    g_star = local_gradients(network, graph, x, target, colours)
    g_ref = local_gradients(network, graph, np.zeros_like(x), target, colours)
    denom = g_star - g_ref
    degenerate = np.abs(denom) < FALLBACK_RTOL * (1.0 + np.abs(g_star))
    ratio = np.divide(g_star, denom, out=g_star.copy(), where=~degenerate)
    return np.asarray(x) * ratio


def attribute(fit, graph, panel, target, months=None):
    """Long table ``covariate, region_id, month, target, score`` for a two-stage fit.

    ``months`` are zero-based panel indices (default all); ``month`` in the
    output is one-based.
    """
    Zo, Ze = fit.inputs(panel)
    if target == "p0":
        network, Z, names = fit.occurrence.network, Zo, fit.occ_standardizer.names
    elif target == "sigma":
        network, Z, names = fit.egpd.network, Ze, fit.egpd_standardizer.names
    else:
        raise ValueError(f"unknown target {target!r}; use one of {TARGETS}")
    T = Z.shape[0]
    t_idx = np.arange(T) if months is None else np.atleast_1d(np.asarray(months, dtype=int))
    if np.any((t_idx < 0) | (t_idx >= T)):
        raise IndexError(f"month index out of range 0..{T - 1}")
    colours = distance_colouring(graph, receptive_hops(network))
    frames = []
    V, d = Z.shape[1], Z.shape[2]
    for t in t_idx:
        cs = contribution_scores(network, graph, Z[t], target, colours)
        frames.append(pd.DataFrame({
            "covariate": np.tile(np.asarray(names, dtype=object), V),
            "region_id": np.repeat(panel.regions.ids, d),
            "month": t + 1,
            "target": target,
            "score": cs.ravel(),
        }))
    return pd.concat(frames, ignore_index=True)


def boxplot_stats(scores, names):
    """Quartiles, Tukey whiskers and IQR of pooled scores; ``scores`` is ``(n_cells, d)``."""
    scores = np.asarray(scores, dtype=float)
    rows = []
    for k, name in enumerate(names):
        col = scores[:, k]
        q1, med, q3 = np.percentile(col, [25, 50, 75])
        iqr = q3 - q1
        lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        rows.append({"covariate": name, "q1": q1, "median": med, "q3": q3,
                     "whisker_lo": col[col >= lo_fence].min(),
                     "whisker_hi": col[col <= hi_fence].max(), "iqr": iqr})
    return pd.DataFrame(rows)


def rank_covariates(scores, names):
    """Covariates ordered by descending IQR of pooled scores; ties keep declaration order."""
    stats = boxplot_stats(scores, names)
    order = np.argsort(-stats["iqr"].to_numpy(), kind="stable")
    ranked = stats.iloc[order][["covariate", "iqr"]].reset_index(drop=True)
    ranked["rank"] = np.arange(1, len(ranked) + 1)
    return ranked


def pooled_matrix(table, names):
    """Reshape a long score table back to ``(n_cells, d)`` in ``names`` order."""
    wide = table.pivot_table(index=["region_id", "month"], columns="covariate",
                             values="score", sort=True)
    return wide[list(names)].to_numpy()
