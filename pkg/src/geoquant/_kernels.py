"""Hot loops: quadratic-form edge lengths, CSR assembly and Dijkstra.

Two interchangeable backends.  ``numba`` compiles the loops with @njit;
``numpy`` uses vectorized numpy and scipy.sparse.csgraph.  Pick one with the
environment variable ``GEOQUANT_BACKEND`` (``numba`` or ``numpy``).  The
default is numba when it imports, else numpy.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _sp_dijkstra

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def backend() -> str:
    want = os.environ.get("GEOQUANT_BACKEND", "").strip().lower()
    if want == "numpy" or not HAVE_NUMBA:
        return "numpy"
    if want in ("", "numba"):
        return "numba"
    raise ValueError(f"GEOQUANT_BACKEND must be 'numba' or 'numpy', got {want!r}")


# --- numpy reference implementations --------------------------------------


def _lengths_np(delta, G):
    q = np.einsum("ei,eij,ej->e", delta, G, delta)
    return np.sqrt(np.maximum(q, 0.0))


def _csr_np(n_nodes, src, dst, w):
    # keep the lightest of parallel edges
    key = src.astype(np.int64) * n_nodes + dst
    order = np.lexsort((w, key))
    key, w = key[order], w[order]
    first = np.ones(len(key), dtype=bool)
    first[1:] = key[1:] != key[:-1]
    key, w = key[first], w[first]
    rows = key // n_nodes
    cols = key % n_nodes
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return np.cumsum(indptr), cols.astype(np.int64), w


def _dijkstra_np(indptr, indices, weights, sources, limit):
    n = len(indptr) - 1
    g = csr_matrix((weights, indices, indptr), shape=(n, n))
    return np.atleast_2d(_sp_dijkstra(g, directed=True, indices=sources, limit=limit))


# --- numba implementations -------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _lengths_nb(delta, G):
        E, D = delta.shape
        out = np.empty(E)
        for e in range(E):
            q = 0.0
            for i in range(D):
                di = delta[e, i]
                if di == 0.0:
                    continue
                for j in range(D):
                    q += di * G[e, i, j] * delta[e, j]
            out[e] = np.sqrt(q) if q > 0.0 else 0.0
        return out

    @njit(cache=True)
    def _csr_nb(n_nodes, src, dst, w):
        # counting sort by source; parallel edges are harmless for Dijkstra
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        for e in range(src.shape[0]):
            indptr[src[e] + 1] += 1
        for i in range(n_nodes):
            indptr[i + 1] += indptr[i]
        fill = indptr[:-1].copy()
        cols = np.empty(src.shape[0], dtype=np.int64)
        ww = np.empty(src.shape[0])
        for e in range(src.shape[0]):
            p = fill[src[e]]
            cols[p] = dst[e]
            ww[p] = w[e]
            fill[src[e]] += 1
        return indptr, cols, ww

    @njit(cache=True)
    def _sift_up(hd, hn, pos, i):
        d = hd[i]
        v = hn[i]
        while i > 0:
            par = (i - 1) // 2
            if hd[par] <= d:
                break
            hd[i] = hd[par]
            hn[i] = hn[par]
            pos[hn[i]] = i
            i = par
        hd[i] = d
        hn[i] = v
        pos[v] = i

    @njit(cache=True)
    def _sift_down(hd, hn, pos, i, size):
        d = hd[i]
        v = hn[i]
        while True:
            c = 2 * i + 1
            if c >= size:
                break
            if c + 1 < size and hd[c + 1] < hd[c]:
                c += 1
            if hd[c] >= d:
                break
            hd[i] = hd[c]
            hn[i] = hn[c]
            pos[hn[i]] = i
            i = c
        hd[i] = d
        hn[i] = v
        pos[v] = i

    @njit(cache=True)
    def _dijkstra_one(indptr, indices, weights, source, limit):
        # indexed binary heap with decrease-key; every node enters at most once
        n = indptr.shape[0] - 1
        dist = np.full(n, np.inf)
        pos = np.full(n, -1, dtype=np.int64)  # -1 never queued, -2 settled
        hd = np.empty(n)
        hn = np.empty(n, dtype=np.int64)
        dist[source] = 0.0
        hd[0] = 0.0
        hn[0] = source
        pos[source] = 0
        size = 1
        while size > 0:
            d = hd[0]
            u = hn[0]
            pos[u] = -2
            size -= 1
            if size > 0:
                hd[0] = hd[size]
                hn[0] = hn[size]
                pos[hn[0]] = 0
                _sift_down(hd, hn, pos, 0, size)
            if d > limit:
                break
            for p in range(indptr[u], indptr[u + 1]):
                v = indices[p]
                if pos[v] == -2:
                    continue
                nd = d + weights[p]
                if nd < dist[v]:
                    dist[v] = nd
                    if pos[v] == -1:
                        hd[size] = nd
                        hn[size] = v
                        pos[v] = size
                        size += 1
                        _sift_up(hd, hn, pos, size - 1)
                    else:
                        hd[pos[v]] = nd
                        _sift_up(hd, hn, pos, pos[v])
        for i in range(n):
            if dist[i] > limit:
                dist[i] = np.inf
        return dist


def edge_lengths(delta: np.ndarray, G: np.ndarray) -> np.ndarray:
    """sqrt(delta^T G delta) row by row."""
    delta = np.ascontiguousarray(delta, dtype=float)
    G = np.ascontiguousarray(G, dtype=float)
    if backend() == "numba":
        return _lengths_nb(delta, G)
    return _lengths_np(delta, G)


def build_csr(n_nodes: int, src, dst, w):
    src = np.ascontiguousarray(src, dtype=np.int64)
    dst = np.ascontiguousarray(dst, dtype=np.int64)
    w = np.ascontiguousarray(w, dtype=float)
    if backend() == "numba":
        return _csr_nb(n_nodes, src, dst, w)
    return _csr_np(n_nodes, src, dst, w)


def shortest_paths(indptr, indices, weights, sources, limit: float = np.inf) -> np.ndarray:
    """Distances from each source, shape (len(sources), n_nodes)."""
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    if backend() == "numba":
        return np.stack([_dijkstra_one(indptr, indices, weights, int(s), float(limit)) for s in sources])
    return _dijkstra_np(indptr, indices, weights, sources, limit)
