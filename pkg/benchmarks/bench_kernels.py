"""Time the compiled kernels against the pure-Python fallbacks.

    python3 benchmarks/bench_kernels.py [--regions 2000] [--repeat 20]

Also times one full-batch training epoch (forward + backward) with each
backend, which is where the sparse product is spent in practice.
"""
import argparse
import timeit

import numpy as np

from egpdgraph import _kernels_py
from egpdgraph.graph import AdjacencySpec, RegionSet, build_adjacency
from egpdgraph.nn import Network

try:
    from egpdgraph import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_csr(graph, width, repeat, rng):
    indptr, indices, data = graph._csr
    dense = rng.normal(size=(graph.n_nodes, width))
    out = {}
    for name, mod in (("python", _kernels_py), ("cython", _kernels_c)):
        if mod is None:
            continue
        res = mod.csr_matmat(indptr, indices, data, dense)
        out[name] = (best_of(lambda: mod.csr_matmat(indptr, indices, data, dense), repeat), res)
    if len(out) == 2:
        assert np.allclose(out["python"][1], out["cython"][1], rtol=1e-12, atol=1e-12)
    return {k: v[0] for k, v in out.items()}


def bench_fill(n_time, repeat, rng):
    starts = rng.integers(0, n_time, n_time).astype(np.int64)
    lengths = rng.geometric(0.5, n_time).astype(np.int64)
    out = {}
    for name, mod in (("python", _kernels_py), ("cython", _kernels_c)):
        if mod is None:
            continue
        out[name] = best_of(lambda: mod.stationary_fill(starts, lengths, n_time), repeat)
    return out


def bench_epoch(graph, n_months, repeat, rng):
    import egpdgraph.graph as graph_mod

    net = Network([("graph_skip", 16), ("graph_skip", 8)], 10, seed=0)
    x = rng.normal(size=(n_months, graph.n_nodes, 10))
    up = rng.normal(size=(n_months, graph.n_nodes))

    def epoch():
        out, cache = net.forward(x, graph)
        net.backward(cache, up, graph)

    out = {}
    original = graph_mod._backend.csr_matmat
    try:
        for name, mod in (("python", _kernels_py), ("cython", _kernels_c)):
            if mod is None:
                continue
            graph_mod._backend.csr_matmat = mod.csr_matmat
            out[name] = best_of(epoch, repeat)
    finally:
        graph_mod._backend.csr_matmat = original
    return out


def report(label, times):
    line = f"{label:<44}" + "".join(f"{k:>8}: {v * 1e3:9.3f} ms" for k, v in times.items())
    if len(times) == 2:
        line += f"   speed-up x{times['python'] / times['cython']:.2f}"
    print(line)


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--regions", type=int, default=2000)
    parser.add_argument("--months", type=int, default=24)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    V = args.regions
    regions = RegionSet(np.arange(1, V + 1), rng.uniform(-38, -28, V), rng.uniform(140, 152, V),
                        rng.uniform(10, 2000, V))
    graph = build_adjacency(regions, AdjacencySpec(100.0, 2, 100.0))
    if _kernels_c is None:
        print("compiled extension not available; timing the fallback only")
    print(f"{V} regions, {graph.A.nnz} stored edges")
    for width in (8, 64, 16 * args.months):
        report(f"csr_matmat width={width}", bench_csr(graph, width, args.repeat, rng))
    for T in (120, 240, 10_000):
        report(f"stationary_fill T={T}", bench_fill(T, args.repeat, rng))
    report(f"training epoch T={args.months}", bench_epoch(graph, args.months, max(3, args.repeat // 4), rng))


if __name__ == "__main__":
    main()
