"""Time the graph kernels under both backends.

    python3 benchmarks/bench_kernels.py [--res 32] [--sources 4] [--repeat 3]

Builds the (y, phi, tau) graph used by gh-converge for the spade family and
times edge lengths, CSR assembly and Dijkstra with GEOQUANT_BACKEND set to
numba and to numpy.  Numba compilation happens in a warm-up call that is not
timed.  Distances from the two backends are compared at the end.
"""

from __future__ import annotations

import argparse
import os
import time

import numpy as np

from geoquant import _kernels, ghconv, riemann
from geoquant.compat_structures import decompose_P0
from geoquant.families import builtin
from geoquant.lattice_cover import Homomorphism
from geoquant.prequantum import LocalModel


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--res", type=int, default=32)
    ap.add_argument("--sources", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    model = LocalModel(1, phi=Homomorphism(1, 1, (1,)))
    fam = builtin("spade")
    fd = decompose_P0(fam.a0)
    setup = ghconv.default_setup(model, res=(args.res,) * 3, n_sources=args.sources, n_targets=1)
    metric = ghconv.adapted_metric(model, fam.family, fd, 0.025)
    grid = setup.grid

    # edge inputs for the length kernel: one stencil offset over all nodes
    pts = grid.points()
    G = metric(pts)
    delta = np.tile(riemann.stencil(3, 2)[7].astype(float) * grid.steps, (len(pts), 1))

    rows = []
    dists = {}
    for name in ("numba", "numpy"):
        os.environ["GEOQUANT_BACKEND"] = name
        if name == "numba":  # compile outside the timed region
            _kernels.edge_lengths(delta[:2], G[:2])
            g = riemann.build_graph(metric, grid)
            g.distances(setup.sources[:1])
        t_len, _ = best_of(lambda: _kernels.edge_lengths(delta, G), args.repeat)
        t_build, g = best_of(lambda: riemann.build_graph(metric, grid), 1)
        t_dij, d = best_of(lambda: g.distances(setup.sources), args.repeat)
        dists[name] = d
        rows.append((name, t_len, t_build, t_dij, g.n_edges))

    print(f"grid {args.res}^3 = {grid.size} nodes, {args.sources} Dijkstra sources")
    print(f"{'backend':<8} {'lengths [s]':>12} {'build [s]':>10} {'dijkstra [s]':>13} {'edges':>10}")
    for name, a, b, c, e in rows:
        print(f"{name:<8} {a:>12.4f} {b:>10.3f} {c:>13.3f} {e:>10}")
    diff = float(np.max(np.abs(dists["numba"] - dists["numpy"])))
    print(f"max distance difference between backends: {diff:.2e}")


if __name__ == "__main__":
    main()
