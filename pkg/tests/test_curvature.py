import math

import numpy as np
import pytest

from geoquant import curvature
from geoquant.compat_structures import AField, DegenerateStructure, ExprField, j_matrix_from_A
from geoquant.families import builtin


def chart_points(n, seed=0, count=6, x_half=0.3):
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.random((count, n)), rng.uniform(-x_half, x_half, (count, n))], axis=1)


@pytest.mark.parametrize("name", ["flat", "const2"])
def test_constant_A_is_flat(name):
    fam = builtin(name)
    pts = chart_points(fam.n)
    Ric = curvature.ricci_tensor(fam.family, 0.2, pts[:, : fam.n], pts[:, fam.n :])
    assert np.abs(Ric).max() <= 1e-6


def test_ricci_symmetric_and_matches_brioschi():
    fam = builtin("spade")
    metric = curvature.base_metric_chart(fam.family, 0.3)
    pts = chart_points(1, seed=2)
    Ric = curvature.ricci_from_metric(metric, pts)
    assert np.abs(Ric - np.swapaxes(Ric, -1, -2)).max() <= 1e-6
    ev = curvature.generalized_eigs(Ric, metric(pts))
    # in two dimensions Ric = K g
    K = curvature.brioschi_gauss(metric, pts)
    assert np.allclose(ev[:, 0], K, atol=1e-5) and np.allclose(ev[:, 1], K, atol=1e-5)


def test_round_sphere_has_positive_ricci():
    def sphere(p):
        u = p[..., 0]
        g = np.zeros(p.shape[:-1] + (2, 2))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = np.sin(u) ** 2
        return g

    pts = np.array([[0.7, 0.1], [1.3, 2.0], [2.2, -1.0]])
    ev = curvature.generalized_eigs(curvature.ricci_from_metric(sphere, pts), sphere(pts))
    assert np.allclose(ev, 1.0, atol=1e-6)
    assert np.allclose(curvature.brioschi_gauss(sphere, pts), 1.0, atol=1e-6)


def test_ricci_scale_invariant():
    fam = builtin("varq")
    metric = curvature.base_metric_chart(fam.family, 0.4)
    pts = chart_points(1, seed=3)
    R1 = curvature.ricci_from_metric(metric, pts)
    R2 = curvature.ricci_from_metric(lambda p: 3.7 * metric(p), pts)
    assert np.allclose(R1, R2, atol=1e-6 * np.abs(R1).max())


def test_richardson_step_halving_consistent():
    fam = builtin("spade")
    metric = curvature.base_metric_chart(fam.family, 0.3)
    pts = chart_points(1, seed=4)
    a = curvature.ricci_from_metric(metric, pts, h=1e-3)
    b = curvature.ricci_from_metric(metric, pts, h=5e-4)
    assert np.abs(a - b).max() <= 1e-6 * max(1, np.abs(a).max())


def test_loss_of_positivity_signalled():
    # Q = x vanishes at x = 0; a point within one step of it breaks the stencil
    bad = AField(1, lambda s, x, th: (1j * s * x[..., 0])[..., None, None])
    with pytest.raises(DegenerateStructure):
        curvature.ricci_tensor(bad, 1.0, [0.3], [5e-4])


def test_kahler_form():
    assert np.array_equal(curvature.kahler_form(1j * np.eye(2)), 2 * np.eye(2))
    q = np.array([0.5, 1.5, 3.0])
    K = curvature.kahler_form(0.2 + 1j * np.diag(q))
    assert np.array_equal(K, 2 * np.diag(q).astype(complex))
    fam = builtin("const2")
    K = curvature.kahler_form(fam.a0.value(0.0, [0.1, 0.2], [0.3, 0.4])[0])
    assert np.array_equal(K, K.conj().T)


@pytest.mark.parametrize("name", ["spade", "varq"])
def test_ricci_form_type_11(name):
    fam = builtin(name)
    n = fam.n
    pts = chart_points(n, seed=5, count=4)
    s = 0.3
    rho = curvature.ricci_form(fam.family, s, pts[:, :n], pts[:, n:])
    J = j_matrix_from_A(fam.family.value(s, pts[:, n:], pts[:, :n]))
    scale = max(1.0, np.abs(rho).max())
    assert np.abs(rho + np.swapaxes(rho, -1, -2)).max() <= 1e-5 * scale
    assert np.abs(np.swapaxes(J, -1, -2) @ rho @ J - rho).max() <= 1e-5 * scale


def test_constq_kappa_bounded():
    fam = builtin("constq")
    pts = curvature.region_points(1, 0.25, 5, 16)
    for s in (0.1, 0.01, 0.001):
        assert abs(curvature.ricci_lower_bound(fam.family, s, pts).min_kappa) <= 0.1


def _leading_oracle(th):
    # Q0 = 2 + sin 2 pi th, H = log Q0, written out by hand
    Q = 2 + np.sin(2 * math.pi * th)
    dQ = 2 * math.pi * np.cos(2 * math.pi * th)
    ddQ = -4 * math.pi**2 * np.sin(2 * math.pi * th)
    H1 = dQ / Q
    H2 = ddQ / Q - H1**2
    return (H2 - H1**2) / (2 * Q)


def test_varq_leading_coefficient():
    fam = builtin("varq")
    th = np.linspace(0, 1, 17)[:-1]
    assert np.allclose(curvature.leading_curvature_n1(fam.a0, th), _leading_oracle(th), rtol=1e-6, atol=1e-6)
    pts = np.stack([th, np.zeros_like(th)], axis=1)
    for s in (0.05, 0.005):
        rep = curvature.ricci_lower_bound(fam.family, s, pts)
        assert np.allclose(s * rep.kappa, _leading_oracle(th), rtol=1e-5, atol=1e-5)


def test_varq_tracks_reference_within_criterion():
    fam = builtin("varq")
    pts = curvature.region_points(1, 0.25, 5, 64)
    ref = curvature.reference_coefficient(fam.a0, pts).min()
    assert ref < 0
    for s in (0.1, 0.01):
        sk = s * curvature.ricci_lower_bound(fam.family, s, pts).min_kappa
        assert abs(sk - ref) <= 0.1 * abs(ref)


def test_reference_coefficient_closed_form():
    # min over theta of (log Q0)'' / Q0 for Q0 = 2 + sin 2 pi th
    fam = builtin("varq")
    th = np.linspace(0, 1, 257)[:-1]
    pts = np.stack([th, np.zeros_like(th)], axis=1)
    Q = 2 + np.sin(2 * math.pi * th)
    dQ = 2 * math.pi * np.cos(2 * math.pi * th)
    ddQ = -4 * math.pi**2 * np.sin(2 * math.pi * th)
    exact = (ddQ / Q - (dQ / Q) ** 2) / Q
    assert np.allclose(curvature.reference_coefficient(fam.a0, pts), exact, rtol=1e-6, atol=1e-6)


def test_criterion_check_cases():
    assert curvature.criterion_check(builtin("constq").a0).passed
    assert curvature.criterion_check(builtin("const2").a0).passed
    r = curvature.criterion_check(builtin("varq").a0)
    assert not r.passed and "(ii)" in r.reason and r.witness is not None
    assert curvature.criterion_check(ExprField(1, [["cos(2*pi*th1) + i"]])).passed
    r = curvature.criterion_check(ExprField(2, [["i + 0.1*sin(2*pi*th2)", "0"], ["0", "i"]]))
    assert not r.passed and "(i)" in r.reason


def test_criterion_matches_kappa_behaviour():
    pts = curvature.region_points(1, 0.25, 3, 16)
    for name in ("constq", "varq"):
        fam = builtin(name)
        kap = [curvature.ricci_lower_bound(fam.family, s, pts).min_kappa for s in (0.1, 0.01, 0.001)]
        bounded = max(abs(k) for k in kap) < 1.0
        assert bounded == curvature.criterion_check(fam.a0).passed
