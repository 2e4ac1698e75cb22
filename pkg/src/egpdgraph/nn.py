"""Feed-forward networks with dense or graph-convolution-with-skip hidden layers.

A network maps a covariate slice ``x`` of shape ``(V, d)`` (or a stack of
slices ``(T, V, d)``) to one real output per region. Hidden layer ``j``
computes::

    dense:       relu(M W1 + b)
    graph_skip:  relu(M W1 + A_norm (M W2) + b)

and the output layer is linear, ``M w + b``. Gradients are computed by hand
in reverse mode; ``A_norm`` is treated as a constant and is assumed
symmetric, which :mod:`egpdgraph.graph` guarantees.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

FORMAT_VERSION = 1
LAYER_KINDS = ("dense", "graph_skip")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    width: int
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.width < 1:
            raise ValueError("layer width must be at least 1")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self):
        return {"kind": self.kind, "width": self.width, "activation": self.activation}


def parse_layers(layers):
    """Layer specs from dicts, ``(kind, width)`` tuples or existing specs."""
    out = []
    for layer in layers:
        if isinstance(layer, LayerSpec):
            out.append(layer)
        elif isinstance(layer, dict):
            out.append(LayerSpec(**layer))
        else:
            out.append(LayerSpec(*layer))
    return out


def count_params(specs, n_inputs):
    n_prev, total = n_inputs, 0
    for spec in parse_layers(specs):
        n_paths = 2 if spec.kind == "graph_skip" else 1
        total += n_paths * n_prev * spec.width + spec.width
        n_prev = spec.width
    return total + n_prev + 1


def _param_shapes(specs, n_inputs):
    shapes = []
    n_prev = n_inputs
    for j, spec in enumerate(specs, start=1):
        shapes.append((f"layer{j}.W1", (n_prev, spec.width)))
        if spec.kind == "graph_skip":
            shapes.append((f"layer{j}.W2", (n_prev, spec.width)))
        shapes.append((f"layer{j}.b", (spec.width,)))
        n_prev = spec.width
    shapes.append(("output.w", (n_prev,)))
    shapes.append(("output.b", (1,)))
    return shapes


class Network:
    """Weights of one parameter network, stored as views into a flat vector."""

    def __init__(self, specs, n_inputs, theta=None, seed=None):
        self.specs = parse_layers(specs)
        for spec in self.specs:
            if spec.activation != "relu":
                raise ValueError("hidden layers use relu activation")
        self.n_inputs = int(n_inputs)
        self._shapes = _param_shapes(self.specs, self.n_inputs)
        self.n_params = sum(int(np.prod(s)) for _, s in self._shapes)
        self.theta = np.zeros(self.n_params)
        if theta is not None:
            theta = np.asarray(theta, dtype=float)
            if theta.shape != (self.n_params,):
                raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
            self.theta[:] = theta
        else:
            self._init_glorot(np.random.default_rng(seed))

    def _views(self, flat):
        out, pos = {}, 0
        for name, shape in self._shapes:
            size = int(np.prod(shape))
            out[name] = flat[pos:pos + size].reshape(shape)
            pos += size
        return out

    @property
    def params(self):
        return self._views(self.theta)

    def _init_glorot(self, rng):
        for name, arr in self.params.items():
            if name.endswith(".b"):
                continue
            fan_in = arr.shape[0]
            fan_out = arr.shape[1] if arr.ndim == 2 else 1
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arr[...] = rng.uniform(-limit, limit, size=arr.shape)

    def copy(self):
        return Network(self.specs, self.n_inputs, theta=self.theta.copy())

    # -------------------------------------------------------------- forward

    def forward(self, x, graph=None):
        """Network output per region, plus the cache needed by :meth:`backward`."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 2
        M = x[None] if squeeze else x
        if M.ndim != 3 or M.shape[2] != self.n_inputs:
            raise ValueError(f"expected input (..., V, {self.n_inputs}), got {x.shape}")
        if graph is not None and graph.n_nodes != M.shape[1]:
            raise ValueError(f"graph has {graph.n_nodes} nodes, input has {M.shape[1]} regions")
        p = self.params
        cache = {"inputs": [], "active": [], "squeeze": squeeze}
        for j, spec in enumerate(self.specs, start=1):
            Z = M @ p[f"layer{j}.W1"] + p[f"layer{j}.b"]
            if spec.kind == "graph_skip":
                if graph is None:
                    raise ValueError("graph_skip layers need a graph")
                Z += _propagate(graph, M @ p[f"layer{j}.W2"])
            cache["inputs"].append(M)
            active = Z > 0
            cache["active"].append(active)
            M = np.where(active, Z, 0.0)
        cache["last"] = M
        out = M @ p["output.w"] + p["output.b"][0]
        return (out[0] if squeeze else out), cache

    def __call__(self, x, graph=None):
        return self.forward(x, graph)[0]

    # -------------------------------------------------------------- backward

    def backward(self, cache, upstream, graph=None, need_input_grad=False):
        """Reverse-mode gradient of ``sum(upstream * output)``.

        Returns the flat parameter gradient and, if requested, the gradient
        with respect to the input (same shape as ``x``).
        """
        upstream = np.asarray(upstream, dtype=float)
        if cache["squeeze"]:
            upstream = upstream[None]
        grad = np.zeros(self.n_params)
        g = self._views(grad)
        p = self.params
        M = cache["last"]
        g["output.w"][...] = np.einsum("tvk,tv->k", M, upstream)
        g["output.b"][0] = upstream.sum()
        dM = upstream[..., None] * p["output.w"]
        for j in range(len(self.specs), 0, -1):
            M_in = cache["inputs"][j - 1]
            dZ = np.where(cache["active"][j - 1], dM, 0.0)
            flat_in = M_in.reshape(-1, M_in.shape[-1])
            flat_dz = dZ.reshape(-1, dZ.shape[-1])
            g[f"layer{j}.W1"][...] = flat_in.T @ flat_dz
            g[f"layer{j}.b"][...] = flat_dz.sum(axis=0)
            skip = self.specs[j - 1].kind == "graph_skip"
            if skip:
                Q = _propagate(graph, dZ)
                g[f"layer{j}.W2"][...] = flat_in.T @ Q.reshape(-1, Q.shape[-1])
            if j > 1 or need_input_grad:
                dM = dZ @ p[f"layer{j}.W1"].T
                if skip:
                    dM += Q @ p[f"layer{j}.W2"].T
        if need_input_grad:
            return grad, (dM[0] if cache["squeeze"] else dM)
        return grad

    # -------------------------------------------------------------- io

    def to_dict(self):
        arrays = [{"name": name, "shape": list(arr.shape), "data": arr.ravel().tolist()}
                  for name, arr in self.params.items()]
        return {"format_version": FORMAT_VERSION, "n_inputs": self.n_inputs,
                "layers": [s.to_dict() for s in self.specs], "arrays": arrays}

    @classmethod
    def from_dict(cls, record):
        if record.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported weight format version {record.get('format_version')!r}")
        net = cls(parse_layers(record["layers"]), record["n_inputs"], theta=None, seed=0)
        views = net.params
        names = [a["name"] for a in record["arrays"]]
        if names != list(views):
            raise ValueError(f"weight arrays {names} do not match layer specs")
        for entry in record["arrays"]:
            arr = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
            views[entry["name"]][...] = arr
        return net

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _propagate(graph, M):
    """Apply ``A_norm`` along the region axis of a ``(T, V, k)`` stack."""
    T, V, k = M.shape
    flat = np.ascontiguousarray(M.transpose(1, 0, 2)).reshape(V, T * k)
    return graph.propagate(flat).reshape(V, T, k).transpose(1, 0, 2)
