import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoquant.lattice_cover import (
    TWO_PI,
    Homomorphism,
    deck_apply,
    find_w0,
    is_surjective,
    kernel_basis,
    reduce_mod_kernel,
)


def test_surjectivity_examples():
    assert is_surjective(Homomorphism(1, 2, (1,)))
    assert not is_surjective(Homomorphism(2, 4, (2, 2)))
    assert is_surjective(Homomorphism(3, 6, (2, 3, 0)))


def test_w_reduced_mod_m():
    assert Homomorphism(2, 3, (4, -1)).w == (1, 2)


def test_kernel_basis_examples():
    lat = kernel_basis(Homomorphism(1, 2, (1,)))
    assert lat.basis.tolist() == [[2]] and lat.covolume == 2
    lat = kernel_basis(Homomorphism(2, 1, (0, 0)))
    assert lat.covolume == 1
    assert abs(round(np.linalg.det(lat.basis))) == 1


def _in_lattice(B, k):
    c = np.linalg.solve(B.astype(float), np.asarray(k, dtype=float))
    return np.allclose(c, np.round(c), atol=1e-9)


def test_kernel_even_sum_lattice_brute_force():
    phi = Homomorphism(2, 2, (1, 1))
    lat = kernel_basis(phi)
    assert lat.covolume == 2
    for k in itertools.product(range(-2, 3), repeat=2):
        assert _in_lattice(lat.basis, k) == ((k[0] + k[1]) % 2 == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 8), st.data())
def test_covolume_equals_index(n, m, data):
    w = tuple(data.draw(st.lists(st.integers(0, m - 1), min_size=n, max_size=n)))
    phi = Homomorphism(n, m, w)
    lat = kernel_basis(phi)
    for c in lat.basis.T:
        assert int(np.dot(w, c)) % m == 0
    # index of Ker in Z^n = size of the image of Phi
    image = len({phi(k) for k in itertools.product(range(m), repeat=n)})
    assert lat.covolume == image
    assert m % lat.covolume == 0
    if is_surjective(phi):
        assert lat.covolume == m


def test_brute_force_index_counting_box():
    # points of Ker in the box [-2m, 2m)^n, divided by the box volume, is 1/covolume
    phi = Homomorphism(2, 3, (1, 2))
    lat = kernel_basis(phi)
    m = 3
    box = range(-2 * m, 2 * m)
    count = sum(1 for k in itertools.product(box, repeat=2) if phi(k) == 0)
    assert count * lat.covolume == (4 * m) ** 2


def test_find_w0_lexicographic():
    assert find_w0(Homomorphism(2, 2, (1, 1))) == (0, 1)
    assert find_w0(Homomorphism(1, 5, (2,))) == (3,)


def test_reduce_examples():
    lat = kernel_basis(Homomorphism(1, 2, (1,)))
    assert reduce_mod_kernel(lat, [2.3])[0] == pytest.approx(0.3)
    assert reduce_mod_kernel(lat, [-1.7])[0] == pytest.approx(0.3)


def test_reduce_coset_brute_force():
    lat = kernel_basis(Homomorphism(2, 2, (1, 1)))
    th = np.array([1.5, 0.5])
    r = reduce_mod_kernel(lat, th)
    diff = th - r
    assert _in_lattice(lat.basis, diff)
    # representative is at least as short as any brute-force coset member with |k_i| <= 3
    B = lat.basis
    best = min(
        np.linalg.norm(np.linalg.solve(B.astype(float), th - np.array(k)))
        for k in itertools.product(range(-3, 4), repeat=2)
        if (k[0] + k[1]) % 2 == 0
    )
    assert np.linalg.norm(np.linalg.solve(B.astype(float), r)) <= best + 1e-12


def test_reduce_invariant_under_kernel_shift():
    lat = kernel_basis(Homomorphism(3, 4, (1, 2, 3)))
    rng = np.random.default_rng(1)
    for _ in range(20):
        th = rng.uniform(-5, 5, 3)
        k = lat.basis @ rng.integers(-3, 4, 3)
        assert np.allclose(reduce_mod_kernel(lat, th), reduce_mod_kernel(lat, th + k), atol=1e-12)


def test_deck_example_m2():
    phi = Homomorphism(2, 2, (1, 0))
    lat = kernel_basis(phi)
    x, th, t = deck_apply(phi, lat, (1, 0), 1, (np.zeros(2), np.zeros(2), 0.0))
    assert t == pytest.approx(math.pi)
    assert _in_lattice(lat.basis, th - np.array([1.0, 0.0]))


def test_deck_identity_and_group_law():
    phi = Homomorphism(2, 3, (1, 1))
    lat = kernel_basis(phi)
    w0 = find_w0(phi)
    p = (np.array([0.2, -0.1]), np.array([0.3, 0.7]), 1.0)
    q = deck_apply(phi, lat, w0, 0, p)
    assert np.allclose(q[1], reduce_mod_kernel(lat, p[1])) and q[2] == pytest.approx(1.0)
    r = p
    for _ in range(3):
        r = deck_apply(phi, lat, w0, 1, r)
    assert _in_lattice(lat.basis, r[1] - p[1])
    assert math.isclose(math.remainder(r[2] - p[2], TWO_PI), 0.0, abs_tol=1e-12)
    a = deck_apply(phi, lat, w0, 2, p)
    b = deck_apply(phi, lat, w0, 1, deck_apply(phi, lat, w0, 1, p))
    assert np.allclose(a[1], b[1]) and a[2] == pytest.approx(b[2])


def test_deck_rejects_bad_w0():
    phi = Homomorphism(1, 3, (1,))
    with pytest.raises(ValueError):
        deck_apply(phi, kernel_basis(phi), (2,), 1, (np.zeros(1), np.zeros(1), 0.0))
