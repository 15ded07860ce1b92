import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoquant import _kernels


def _use(monkeypatch, name):
    monkeypatch.setenv("GEOQUANT_BACKEND", name)


def test_backend_selection(monkeypatch):
    _use(monkeypatch, "numpy")
    assert _kernels.backend() == "numpy"
    _use(monkeypatch, "NUMBA")
    assert _kernels.backend() == "numba"
    monkeypatch.delenv("GEOQUANT_BACKEND")
    assert _kernels.backend() == "numba"
    _use(monkeypatch, "cuda")
    with pytest.raises(ValueError):
        _kernels.backend()


def _random_graph(rng, n, e):
    src = rng.integers(0, n, e)
    dst = rng.integers(0, n, e)
    w = rng.uniform(0.1, 2.0, e)
    return src, dst, w


def _as_dict(indptr, indices, weights):
    out = {}
    for a in range(len(indptr) - 1):
        for p in range(indptr[a], indptr[a + 1]):
            k = (a, int(indices[p]))
            out[k] = min(out.get(k, np.inf), weights[p])
    return out


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_csr_and_dijkstra_agree(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 60))
    src, dst, w = _random_graph(rng, n, int(rng.integers(n, 6 * n)))
    sources = rng.integers(0, n, 3)
    res = {}
    with pytest.MonkeyPatch.context() as mp:
        for b in ("numpy", "numba"):
            _use(mp, b)
            csr = _kernels.build_csr(n, src, dst, w)
            res[b] = (_as_dict(*csr), _kernels.shortest_paths(*csr, sources), _kernels.shortest_paths(*csr, sources, limit=1.5))
    assert res["numpy"][0] == res["numba"][0]
    assert np.allclose(res["numpy"][1], res["numba"][1], rtol=1e-12, equal_nan=False)
    assert np.array_equal(np.isinf(res["numpy"][2]), np.isinf(res["numba"][2]))
    fin = np.isfinite(res["numpy"][2])
    assert np.allclose(res["numpy"][2][fin], res["numba"][2][fin], rtol=1e-12)


def test_dijkstra_against_bellman_ford():
    rng = np.random.default_rng(3)
    n = 40
    src, dst, w = _random_graph(rng, n, 200)
    d = np.full(n, np.inf)
    d[0] = 0
    for _ in range(n):
        for a, b, c in zip(src, dst, w):
            d[b] = min(d[b], d[a] + c)
    with pytest.MonkeyPatch.context() as mp:
        for b in ("numpy", "numba"):
            _use(mp, b)
            out = _kernels.shortest_paths(*_kernels.build_csr(n, src, dst, w), [0])[0]
            assert np.allclose(out, d)


@pytest.mark.parametrize("D", [1, 2, 3, 5])
def test_edge_lengths_agree(monkeypatch, D):
    rng = np.random.default_rng(D)
    M = rng.normal(size=(50, D, D))
    G = M @ np.swapaxes(M, 1, 2)
    delta = rng.integers(-2, 3, (50, D)).astype(float)
    _use(monkeypatch, "numpy")
    a = _kernels.edge_lengths(delta, G)
    _use(monkeypatch, "numba")
    b = _kernels.edge_lengths(delta, G)
    assert np.allclose(a, b, rtol=1e-13)
    exact = np.sqrt(np.einsum("ei,eij,ej->e", delta, G, delta))
    assert np.allclose(a, exact)


def test_heap_growth(monkeypatch):
    # every leaf is queued before any is settled
    n = 5000
    src = np.zeros(n - 1, dtype=np.int64)
    dst = np.arange(1, n)
    w = np.linspace(1, 2, n - 1)[::-1]
    _use(monkeypatch, "numba")
    d = _kernels.shortest_paths(*_kernels.build_csr(n, src, dst, w), [0])[0]
    assert d[0] == 0 and np.allclose(d[1:], w)
