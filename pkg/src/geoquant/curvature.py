"""Ricci curvature of g_A by coordinate finite differences, and the Ricci lower-bound criterion.

The metric is differentiated numerically in the (theta, x) chart with central
differences and one Richardson level.  Ricci comes from the Christoffel
symbols and the all-lower Riemann tensor

    R_abcd = 1/2 (g_ad,bc + g_bc,ad - g_ac,bd - g_bd,ac)
             + g_ef (G^e_bc G^f_ad - G^e_bd G^f_ac),

contracted as Ric_bd = g^ac R_abcd (positive on round spheres).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .compat_structures import AField, DegenerateStructure, base_metric_from_A, j_matrix_from_A

FD_STEP = 1e-3


def _derivs(metric: Callable, pts: np.ndarray, h: float):
    """g, dg[..., a, i, j] = d_a g_ij and ddg[..., a, b, i, j] at pts."""
    D = pts.shape[-1]
    E = np.eye(D)
    g0 = metric(pts)
    dg = np.empty(g0.shape[:-2] + (D,) + g0.shape[-2:])
    ddg = np.empty(g0.shape[:-2] + (D, D) + g0.shape[-2:])
    cache = {}

    def at(*offs):
        key = tuple(offs)
        if key not in cache:
            shift = sum(c * E[a] for a, c in offs) * h if offs else 0.0
            cache[key] = metric(pts + shift)
        return cache[key]

    for a in range(D):
        gp, gm = at((a, 1)), at((a, -1))
        dg[..., a, :, :] = (gp - gm) / (2 * h)
        ddg[..., a, a, :, :] = (gp - 2 * g0 + gm) / h**2
        for b in range(a + 1, D):
            v = (at((a, 1), (b, 1)) - at((a, 1), (b, -1)) - at((a, -1), (b, 1)) + at((a, -1), (b, -1))) / (4 * h * h)
            ddg[..., a, b, :, :] = v
            ddg[..., b, a, :, :] = v
    return g0, dg, ddg


def ricci_from_metric(metric: Callable, pts, h: float = FD_STEP, richardson: bool = True) -> np.ndarray:
    """Ricci tensor (..., D, D) of the metric field at pts (..., D)."""
    pts = np.asarray(pts, dtype=float)
    if richardson:
        g, dg1, dd1 = _derivs(metric, pts, h)
        _, dg2, dd2 = _derivs(metric, pts, h / 2)
        dg = (4 * dg2 - dg1) / 3
        ddg = (4 * dd2 - dd1) / 3
    else:
        g, dg, ddg = _derivs(metric, pts, h)
    gi = np.linalg.inv(g)
    # Gamma_{l,ij} = 1/2 (d_i g_jl + d_j g_il - d_l g_ij), then raise l
    low = 0.5 * (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)
    Gam = np.einsum("...kl,...lij->...kij", gi, low)
    # R_abcd, second-derivative part: ddg[..., p, q, i, j] = d_p d_q g_ij
    t1 = np.einsum("...bcad->...abcd", ddg)  # g_ad,bc
    t2 = np.einsum("...adbc->...abcd", ddg)  # g_bc,ad
    t3 = np.einsum("...bdac->...abcd", ddg)  # g_ac,bd
    t4 = np.einsum("...acbd->...abcd", ddg)  # g_bd,ac
    quad = np.einsum("...ef,...ebc,...fad->...abcd", g, Gam, Gam) - np.einsum("...ef,...ebd,...fac->...abcd", g, Gam, Gam)
    Rm = 0.5 * (t1 + t2 - t3 - t4) + quad
    Ric = np.einsum("...ac,...abcd->...bd", gi, Rm)
    return 0.5 * (Ric + np.swapaxes(Ric, -1, -2))


def base_metric_chart(A: AField, s: float):
    """g_A as a function of chart points (theta, x)."""
    n = A.n

    def metric(p):
        return base_metric_from_A(A.value(s, p[..., n:], p[..., :n]))

    return metric


def ricci_tensor(A: AField, s: float, theta, x, h: float = FD_STEP) -> np.ndarray:
    """Ricci of g_A at (theta, x) in the (theta, x) chart."""
    pts = np.concatenate([np.atleast_1d(np.asarray(theta, dtype=float)), np.atleast_1d(np.asarray(x, dtype=float))], axis=-1)
    try:
        return ricci_from_metric(base_metric_chart(A, s), pts, h)
    except DegenerateStructure as exc:
        raise DegenerateStructure(f"positivity lost on the difference stencil: {exc}") from exc


def generalized_eigs(Ric: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Eigenvalues of g^{-1} Ric (sorted, batched)."""
    L = np.linalg.cholesky(g)
    Li = np.linalg.inv(L)
    M = Li @ Ric @ np.swapaxes(Li, -1, -2)
    return np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))


def brioschi_gauss(metric: Callable, pts, h: float = FD_STEP) -> np.ndarray:
    """Gauss curvature of a 2D metric E du^2 + 2F du dv + G dv^2 by the Brioschi formula."""
    pts = np.asarray(pts, dtype=float)
    g1, d1, dd1 = _derivs(metric, pts, h)
    _, d2, dd2 = _derivs(metric, pts, h / 2)
    d = (4 * d2 - d1) / 3
    dd = (4 * dd2 - dd1) / 3
    g = g1
    E, F, G = g[..., 0, 0], g[..., 0, 1], g[..., 1, 1]
    Eu, Ev = d[..., 0, 0, 0], d[..., 1, 0, 0]
    Fu, Fv = d[..., 0, 0, 1], d[..., 1, 0, 1]
    Gu, Gv = d[..., 0, 1, 1], d[..., 1, 1, 1]
    Evv = dd[..., 1, 1, 0, 0]
    Fuv = dd[..., 0, 1, 0, 1]
    Guu = dd[..., 0, 0, 1, 1]
    M1 = np.stack(
        [
            np.stack([-0.5 * Evv + Fuv - 0.5 * Guu, 0.5 * Eu, Fu - 0.5 * Ev], -1),
            np.stack([Fv - 0.5 * Gu, E, F], -1),
            np.stack([0.5 * Gv, F, G], -1),
        ],
        -2,
    )
    z = np.zeros_like(E)
    M2 = np.stack(
        [
            np.stack([z, 0.5 * Ev, 0.5 * Gu], -1),
            np.stack([0.5 * Ev, E, F], -1),
            np.stack([0.5 * Gu, F, G], -1),
        ],
        -2,
    )
    return (np.linalg.det(M1) - np.linalg.det(M2)) / (E * G - F * F) ** 2


def kahler_form(A) -> np.ndarray:
    """2Q as a hermitian matrix in the d/dtheta coframe."""
    Q = np.asarray(A, dtype=complex).imag
    return (2.0 * Q).astype(complex)


def ricci_form(A: AField, s: float, theta, x) -> np.ndarray:
    """rho(X, Y) = Ric(JX, Y) as a (2n, 2n) matrix in the (theta, x) chart."""
    Ric = ricci_tensor(A, s, theta, x)
    J = j_matrix_from_A(A.value(s, x, theta))
    return np.swapaxes(J, -1, -2) @ Ric


@dataclass
class CurvatureReport:
    s: float
    points: np.ndarray
    kappa: np.ndarray  # min eigenvalue of g^{-1} Ric per point
    kappa_max: np.ndarray

    @property
    def min_kappa(self) -> float:
        return float(self.kappa.min())

    @property
    def argmin(self) -> np.ndarray:
        return self.points[int(np.argmin(self.kappa))]


def region_points(n: int, x_half: float, nx: int, nth: int) -> np.ndarray:
    """Chart points (theta, x) on theta in [0,1)^n times [-x_half, x_half]^n."""
    th = np.arange(nth) / nth
    xs = np.linspace(-x_half, x_half, nx) if nx > 1 else np.zeros(1)
    mesh = np.meshgrid(*([th] * n + [xs] * n), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def ricci_lower_bound(A: AField, s: float, points: np.ndarray, h: float = FD_STEP) -> CurvatureReport:
    n = A.n
    metric = base_metric_chart(A, s)
    Ric = ricci_from_metric(metric, points, h)
    g = metric(points)
    ev = generalized_eigs(Ric, g)
    del n
    return CurvatureReport(s, points, ev[..., 0], ev[..., -1])


def reference_coefficient(a0: AField, points: np.ndarray) -> np.ndarray:
    """min eigenvalue of sqrt(Q0)^{-1} Hess_theta(log det Q0) sqrt(Q0)^{-1} per point.

    The Hessian is taken by central differences (step 1e-4, Richardson).
    """
    n = a0.n
    th, x = points[:, :n], points[:, n:]
    h = 1e-4

    def logdet(tt):
        return np.log(np.linalg.det(a0.value(0.0, x, tt).imag))

    E = np.eye(n)

    def hess(hh):
        H = np.empty((len(points), n, n))
        f0 = logdet(th)
        for i in range(n):
            for j in range(i, n):
                if i == j:
                    v = (logdet(th + hh * E[i]) - 2 * f0 + logdet(th - hh * E[i])) / hh**2
                else:
                    v = (
                        logdet(th + hh * (E[i] + E[j]))
                        - logdet(th + hh * (E[i] - E[j]))
                        - logdet(th - hh * (E[i] - E[j]))
                        + logdet(th - hh * (E[i] + E[j]))
                    ) / (4 * hh * hh)
                H[:, i, j] = H[:, j, i] = v
        return H

    Hs = (4 * hess(h / 2) - hess(h)) / 3
    Q = a0.value(0.0, x, th).imag
    w, V = np.linalg.eigh(Q)
    Ri = (V / np.sqrt(w)[:, None, :]) @ np.swapaxes(V, -1, -2)
    return np.linalg.eigvalsh(Ri @ Hs @ Ri)[:, 0]


def leading_curvature_n1(a0: AField, theta) -> np.ndarray:
    """Exact s -> 0 limit of s K for n = 1 families A = s A0(theta) + O(s^2).

    With H = log Q0, s K -> (H'' - H'^2) / (2 Q0).  This keeps the H'^2 term
    that the frame computation drops.
    """
    th = np.asarray(theta, dtype=float).reshape(-1, 1)
    x = np.zeros_like(th)
    Q = a0.value(0.0, x, th).imag[:, 0, 0]
    dQ = a0.d_theta(0.0, x, th).imag[:, 0, 0, 0]
    h = 1e-4
    d2 = (a0.d_theta(0.0, x, th + h).imag - a0.d_theta(0.0, x, th - h).imag)[:, 0, 0, 0] / (2 * h)
    H1 = dQ / Q
    H2 = d2 / Q - H1**2
    return (H2 - H1**2) / (2 * Q)


@dataclass
class CriterionResult:
    passed: bool
    reason: str = ""
    witness: tuple | None = None
    residual: float = 0.0


def criterion_check(a0: AField, grid: int = 32, x_probe=(-0.25, 0.0, 0.25), tol: float = 1e-8) -> CriterionResult:
    """(i) dA0_ij/dth^k symmetric in (j, k); (ii) Q0 independent of theta."""
    n = a0.n
    th = np.arange(grid) / grid
    mesh = np.stack(np.meshgrid(*([th] * n), indexing="ij"), axis=-1).reshape(-1, n)
    for xv in x_probe:
        x = np.full_like(mesh, xv)
        d = a0.d_theta(0.0, x, mesh)  # [p, k, i, j] = dA_ij / dth^k
        asym = np.abs(d - np.swapaxes(d, -3, -1))
        if asym.max() > tol:
            p = np.unravel_index(int(np.argmax(asym)), asym.shape)
            return CriterionResult(False, "derivative symmetry (i)", (tuple(mesh[p[0]]), xv), float(asym.max()))
        Q = a0.value(0.0, x, mesh).imag
        dev = np.abs(Q - Q.mean(axis=0))
        if dev.max() > tol:
            p = int(np.unravel_index(int(np.argmax(dev)), dev.shape)[0])
            return CriterionResult(False, "theta-independence of Q0 (ii)", (tuple(mesh[p]), xv), float(dev.max()))
    return CriterionResult(True)
