"""Equivariant measured GH convergence experiments for the collapsing family.

Distances of the pre-limit metric are computed in coordinates adapted to the
approximation map: with theta = B phi (B a basis of Ker Phi, phi periodic),
``x = sqrt(s Thetabar) y + s grad H(theta)`` and ``t = tau + s H(theta)``,
psi_s becomes the projection (y, phi, tau) -> (y, tau).  Nodes of the
(y, phi, tau) grid then map exactly onto nodes of the limit (y, tau) grid,
so both distance computations share their discretization in (y, tau).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import riemann
from .compat_structures import (
    FrozenData,
    SpadeFamily,
    _sym_sqrt,
    connection_metric_from_A,
    decompose_P0,
    frozen_family,
    limit_metric,
    map_Fhat,
    map_phi,
)
from .curvature import criterion_check
from .lattice_cover import TWO_PI, deck_apply, is_surjective
from .prequantum import LocalModel


class CriterionFailure(ValueError):
    pass


@dataclass
class ApproximationMap:
    model: LocalModel
    spade: SpadeFamily
    s: float
    r: float
    frozen: FrozenData

    def __call__(self, x, th, t):
        x2, th2, t2 = map_Fhat(self.frozen, self.s, -1, x, th, t)
        y, tt = map_phi(self.model.m, self.s, self.frozen.Thetabar, x2, th2, t2)
        return y, np.mod(tt, TWO_PI)

    def base_image(self) -> tuple[np.ndarray, complex]:
        """psi_s of the base frame, as (y, e^{i t}); the limit base point is (0, 1)."""
        n = self.model.n
        y, t = self(np.zeros(n), np.zeros(n), 0.0)
        return y, complex(np.exp(1j * t))


def equivariance_residual(amap: ApproximationMap, count: int = 256, seed: int = 0) -> tuple[float, float]:
    """(S^1 residual, deck residual) of psi_s on random points of the r-ball.

    S^1: psi(u e^{i a}) = psi(u) e^{i a}.  Deck: the k-th deck transformation
    maps to the rotation by 2 pi k / m, with the y component unchanged.
    """
    model = amap.model
    n = model.n
    rng = np.random.default_rng(seed)
    rr = math.sqrt(amap.s) * amap.r
    x = rng.uniform(-rr, rr, (count, n))
    th = rng.uniform(0, 1, (count, n))
    t = rng.uniform(0, TWO_PI, count)
    a = rng.uniform(0, TWO_PI, count)
    y0, t0 = amap(x, th, t)
    y1, t1 = amap(x, th, t + a)
    s1 = max(float(np.abs(y1 - y0).max()), float(np.abs(np.exp(1j * t1) - np.exp(1j * (t0 + a))).max()))
    deck = 0.0
    for k in range(model.m):
        pts = [deck_apply(model.phi, model.lattice, model.w0, k, (x[i], th[i], t[i])) for i in range(count)]
        xk = np.array([p[0] for p in pts])
        thk = np.array([p[1] for p in pts])
        tk = np.array([p[2] for p in pts])
        yk, tt = amap(xk, thk, tk)
        rot = np.exp(1j * (t0 - TWO_PI * k / model.m))
        deck = max(deck, float(np.abs(yk - y0).max()), float(np.abs(np.exp(1j * tt) - rot).max()))
    return s1, deck


def build_approximation(model: LocalModel, spade: SpadeFamily, s: float, r: float) -> ApproximationMap:
    if not is_surjective(model.phi):
        raise CriterionFailure("the base fiber is not strict m-BS: Phi is not surjective")
    chk = criterion_check(spade.a0)
    if not chk.passed:
        raise CriterionFailure(f"criterion failed: {chk.reason} at theta={chk.witness}")
    return ApproximationMap(model, spade, s, r, decompose_P0(spade.a0))


# --- metrics in adapted coordinates ---------------------------------------


def adapted_metric(model: LocalModel, field_, fd: FrozenData, s: float):
    """Connection metric of A(s) pulled back to (y, phi, tau) coordinates."""
    n = model.n
    sigma = model.sigma
    B = model.lattice.basis.astype(float)
    R = _sym_sqrt(s * fd.Thetabar)

    def metric(p):
        y, ph = p[:, :n], p[:, n : 2 * n]
        th = ph @ B.T
        grad = fd.grad_H(th)
        hess = fd.hess_H(th)
        x = y @ R.T + s * grad
        g = connection_metric_from_A(field_.value(s, x, th), sigma, x)
        M = len(p)
        D = 2 * n + 1
        # Jacobian of (t, theta, x) with respect to (y, phi, tau)
        J = np.zeros((M, D, D))
        J[:, 0, n : 2 * n] = s * grad @ B
        J[:, 0, 2 * n] = 1.0
        J[:, 1 : n + 1, n : 2 * n] = B
        J[:, n + 1 :, :n] = R
        J[:, n + 1 :, n : 2 * n] = s * hess @ B
        return np.swapaxes(J, 1, 2) @ g @ J

    return metric


def limit_metric_yt(sigma: float, fd: FrozenData):
    """g_infinity on the cover, in (y, tau) order with tau of period 2 pi."""
    n = fd.n

    def metric(p):
        g = limit_metric(1, sigma, fd, "submersion", p[:, :n])
        perm = list(range(1, n + 1)) + [0]
        return g[:, perm][:, :, perm]

    return metric


@dataclass
class DistortionReport:
    s: float
    r: float
    epsilon: float
    surjectivity_margin: float
    measure_ratio: float | None
    fiber_diameter: float
    pairs: int
    mean_gap: float = 0.0
    pair_gap: float = 0.0

    def to_row(self) -> dict:
        return {
            "s": self.s,
            "r": self.r,
            "epsilon": self.epsilon,
            "surjectivity_margin": self.surjectivity_margin,
            "fiber_diameter": self.fiber_diameter,
            "measure_ratio": self.measure_ratio,
        }


@dataclass
class GHSetup:
    """Grid and sample pairs shared by every s of a series."""

    model: LocalModel
    r: float
    y_half: float
    res: tuple[int, int, int]  # (y, phi, tau) resolution per axis
    n_sources: int
    n_targets: int
    seed: int
    grid: riemann.Grid = field(init=False)
    limit_grid: riemann.Grid = field(init=False)
    sources: np.ndarray = field(init=False)
    targets: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.model.n
        ny, nphi, ntau = self.res
        if ntau % self.model.m:
            raise ValueError("tau resolution must be divisible by m")
        self.grid = riemann.Grid(
            tuple(
                [riemann.Axis(-self.y_half, self.y_half, ny)] * n
                + [riemann.Axis(0.0, 1.0, nphi, True)] * n
                + [riemann.Axis(0.0, TWO_PI, ntau, True)]
            )
        )
        self.limit_grid = riemann.Grid(
            tuple([riemann.Axis(-self.y_half, self.y_half, ny)] * n + [riemann.Axis(0.0, TWO_PI, ntau, True)])
        )
        lo = [-self.r] * n + [0.0] * n + [0.0]
        hi = [self.r] * n + [1.0] * n + [TWO_PI]
        pts = riemann.sobol_points(lo, hi, self.n_sources + self.n_targets, self.seed)
        nodes = self.grid.nearest(pts)
        self.sources = nodes[: self.n_sources]
        self.targets = nodes[self.n_sources :]

    def deck_nodes(self, nodes: np.ndarray, k: int) -> np.ndarray:
        """Image of grid nodes under the k-th deck transformation."""
        n = self.model.n
        m = self.model.m
        mi = np.stack(np.unravel_index(nodes, self.grid.shape), axis=-1)
        B = self.model.lattice.basis.astype(float)
        dphi = np.linalg.solve(B, np.asarray(self.model.w0, dtype=float)) * k
        shift = dphi * self.res[1]
        if not np.allclose(shift, np.round(shift)):
            raise ValueError("phi resolution is not compatible with the deck action")
        mi[:, n : 2 * n] = np.mod(mi[:, n : 2 * n] + np.round(shift).astype(np.int64), self.res[1])
        mi[:, 2 * n] = np.mod(mi[:, 2 * n] - k * (self.res[2] // m), self.res[2])
        return np.ravel_multi_index(tuple(mi.T), self.grid.shape)

    def project(self, nodes: np.ndarray) -> np.ndarray:
        """psi_s on grid nodes: drop the phi indices."""
        n = self.model.n
        mi = np.stack(np.unravel_index(nodes, self.grid.shape), axis=-1)
        keep = list(range(n)) + [2 * n]
        return np.ravel_multi_index(tuple(mi[:, keep].T), self.limit_grid.shape)

    def rotate_limit(self, nodes: np.ndarray, k: int) -> np.ndarray:
        n = self.model.n
        mi = np.stack(np.unravel_index(nodes, self.limit_grid.shape), axis=-1)
        mi[:, n] = np.mod(mi[:, n] - k * (self.res[2] // self.model.m), self.res[2])
        return np.ravel_multi_index(tuple(mi.T), self.limit_grid.shape)


def limit_distances(setup: GHSetup, fd: FrozenData, order: int = 2) -> np.ndarray:
    """Quotient limit distances d_{m,infinity}(psi(source), psi(target)), shape (S, T)."""
    g = riemann.build_graph(limit_metric_yt(setup.model.sigma, fd), setup.limit_grid, order=order)
    src = setup.project(setup.sources)
    dist = g.distances(src)
    tgt = setup.project(setup.targets)
    out = np.full((len(src), len(tgt)), np.inf)
    for k in range(setup.model.m):
        out = np.minimum(out, dist[:, setup.rotate_limit(tgt, k)])
    return out


def prelimit_distances(setup: GHSetup, field_, fd: FrozenData, s: float, order: int = 2):
    """Quotient distances of the connection metric of A(s) between sample nodes.

    Returns (distances (S, T), fiber diameters per source).
    """
    n = setup.model.n
    metric = adapted_metric(setup.model, field_, fd, s)
    adaptive = n if n == 1 else None
    g = riemann.build_graph(metric, setup.grid, order=order, adaptive_axis=adaptive)
    dist = g.distances(setup.sources)
    out = np.full((len(setup.sources), len(setup.targets)), np.inf)
    for k in range(setup.model.m):
        out = np.minimum(out, dist[:, setup.deck_nodes(setup.targets, k)])
    # psi-fibre through each source: same (y, tau), all phi; these pairs have
    # limit distance 0, so their gap is the quotient distance itself
    mi = np.stack(np.unravel_index(setup.sources, setup.grid.shape), axis=-1)
    cells = [np.arange(setup.res[1])] * n
    mesh = np.stack(np.meshgrid(*cells, indexing="ij"), axis=-1).reshape(-1, n)
    fib = []
    for row, idx in zip(dist, mi):
        full = np.repeat(idx[None, :], len(mesh), axis=0)
        full[:, n : 2 * n] = mesh
        nodes = np.ravel_multi_index(tuple(full.T), setup.grid.shape)
        q = np.min([row[setup.deck_nodes(nodes, k)] for k in range(setup.model.m)], axis=0)
        fib.append(float(np.max(q)))
    return out, np.array(fib)


def distortion(
    model: LocalModel,
    spade: SpadeFamily,
    s: float,
    r: float = 1.5,
    setup: GHSetup | None = None,
    d_inf: np.ndarray | None = None,
    frozen_only: bool = False,
    **setup_kw,
) -> DistortionReport:
    """epsilon = max over sampled pairs of |d_s(u, v) - d_infinity(psi u, psi v)|.

    The pairs are sources x (targets + the psi-fibre through the source).
    """
    amap = build_approximation(model, spade, s, r)
    fd = amap.frozen
    if setup is None:
        setup = GHSetup(model, r, **setup_kw)
    if d_inf is None:
        d_inf = limit_distances(setup, fd)
    field_ = frozen_family(spade) if frozen_only else spade.family
    d_s, fib = prelimit_distances(setup, field_, fd, s)
    gap = np.abs(d_s - d_inf)
    return DistortionReport(
        s=s,
        r=r,
        epsilon=float(max(gap.max(), fib.max())),
        surjectivity_margin=0.0,
        measure_ratio=None,
        fiber_diameter=float(fib.max()),
        pairs=int(gap.size + len(fib) * setup.res[1] ** model.n),
        mean_gap=float(gap.mean()),
        pair_gap=float(gap.max()),
    )


def default_setup(model: LocalModel, r: float = 1.5, y_half: float = 3.0, res=(64, 64, 64), n_sources: int = 10, n_targets: int = 20, seed: int = 7) -> GHSetup:
    return GHSetup(model, r, y_half, tuple(res), n_sources, n_targets, seed)


def distortion_series(model: LocalModel, spade: SpadeFamily, s_series, setup: GHSetup, frozen_only: bool = False) -> list[DistortionReport]:
    fd = decompose_P0(spade.a0)
    d_inf = limit_distances(setup, fd)
    return [distortion(model, spade, s, setup.r, setup=setup, d_inf=d_inf, frozen_only=frozen_only) for s in s_series]


# --- measure ---------------------------------------------------------------


def K_constant(model: LocalModel, fd: FrozenData) -> float:
    return math.sqrt(model.sigma) * model.lattice.covolume * math.sqrt(float(np.linalg.det(fd.Thetabar)))


def bump(y: np.ndarray, t: np.ndarray, rho: float = 2.0) -> np.ndarray:
    """Smooth compactly supported test function on R^n x S^1."""
    r2 = np.sum(y * y, axis=-1) / rho**2
    out = np.zeros_like(r2)
    inside = r2 < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out * (1.0 + 0.5 * np.cos(t))


def measure_check(model: LocalModel, spade: SpadeFamily, s: float, resolution: int = 64, rho: float = 2.0, frozen_only: bool = False) -> float:
    """[int f o psi_s dmu] / [K s^{n/2} int f dmu_infinity] by midpoint sums.

    The numerator is summed over (x, theta, t) in the original coordinates
    of the cover; theta covers one fundamental cell of Ker Phi.
    """
    n = model.n
    amap = build_approximation(model, spade, s, rho)
    fd = amap.frozen
    field_ = frozen_family(spade) if frozen_only else spade.family
    B = model.lattice.basis.astype(float)
    R = _sym_sqrt(s * fd.Thetabar)
    # x box containing the support for every theta
    ph_probe = (np.arange(256) + 0.5) / 256
    probe = np.stack(np.meshgrid(*([ph_probe] * n), indexing="ij"), axis=-1).reshape(-1, n) @ B.T
    shift = s * fd.grad_H(probe)
    half = rho * np.abs(R).sum(axis=1)
    xlo = shift.min(axis=0) - half
    xhi = shift.max(axis=0) + half
    lo = np.concatenate([xlo, np.zeros(n), [0.0]])
    hi = np.concatenate([xhi, np.ones(n), [TWO_PI]])
    res = [resolution] * (2 * n + 1)
    axes = [lo[d] + (hi[d] - lo[d]) * (np.arange(res[d]) + 0.5) / res[d] for d in range(2 * n + 1)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    x, ph, t = pts[:, :n], pts[:, n : 2 * n], pts[:, 2 * n]
    th = ph @ B.T
    y, tt = amap(x, th, t)
    g = connection_metric_from_A(field_.value(s, x, th), model.sigma, x)
    dens = np.sqrt(np.linalg.det(g)) * abs(np.linalg.det(B))  # dtheta = |det B| dphi
    cell = float(np.prod((hi - lo) / res))
    num = float(np.sum(bump(y, tt, rho) * dens) * cell)
    # denominator on a fine product grid in (y, t)
    fine = 200
    yax = -rho + 2 * rho * (np.arange(fine) + 0.5) / fine
    tax = TWO_PI * (np.arange(fine) + 0.5) / fine
    ym = np.stack(np.meshgrid(*([yax] * n), indexing="ij"), axis=-1).reshape(-1, n)
    fy = bump(ym, np.zeros(len(ym)), rho) / 1.5
    ft = 1.0 + 0.5 * np.cos(tax)
    den = float(fy.sum() * (2 * rho / fine) ** n * ft.sum() * (TWO_PI / fine))
    return num / (K_constant(model, fd) * s ** (n / 2) * den)


# --- rates -----------------------------------------------------------------


@dataclass
class ConvergenceFit:
    s: np.ndarray
    eps: np.ndarray
    slope: float
    intercept: float
    K: float | None = None
    monotone: bool = True


class NonMonotoneSeries(ValueError):
    pass


def rate_fit(s_series, eps_series, K: float | None = None, strict: bool = False) -> ConvergenceFit:
    s = np.asarray(s_series, dtype=float)
    e = np.asarray(eps_series, dtype=float)
    if len(s) < 2 or np.any(np.diff(s) >= 0):
        raise ValueError("s-series must be strictly decreasing with at least two entries")
    mono = bool(np.all(np.diff(e) < 0))
    if strict and not mono:
        raise NonMonotoneSeries(f"epsilon series is not strictly decreasing: {e.tolist()}")
    slope, icpt = np.polyfit(np.log(s), np.log(e), 1)
    return ConvergenceFit(s, e, float(slope), float(icpt), K, mono)


def dsym_series(model: LocalModel, spade: SpadeFamily, s_series, r: float = 1.0, samples: int = 2048, seed: int = 0) -> np.ndarray:
    """sup of dsym(ghat_A, ghat_A') over U_{sqrt(s) r} x S^1 for each s."""
    n = model.n
    Af = spade.family
    Ap = frozen_family(spade)
    cov = model.lattice.basis.astype(float)
    out = []
    for s in s_series:
        rr = math.sqrt(s) * r

        def g1(p, s=s):
            x, th = p[:, :n], p[:, n:] @ cov.T
            return connection_metric_from_A(Af.value(s, x, th), model.sigma, x)

        def g2(p, s=s):
            x, th = p[:, :n], p[:, n:] @ cov.T
            return connection_metric_from_A(Ap.value(s, x, th), model.sigma, x)

        lo = [-rr] * n + [0.0] * n
        hi = [rr] * n + [1.0] * n
        out.append(riemann.dsym_field(g1, g2, lo, hi, samples, seed))
    return np.array(out)


# --- orbits over non-BS fibres ---------------------------------------------


@dataclass
class OrbitRow:
    s: float
    diameter: float
    argmax_t: float


def orbit_diameter(
    model: LocalModel,
    spade: SpadeFamily,
    x_base: float,
    s: float,
    y_half: float = 4.0,
    windings: int = 16,
    per_unit: int = 8,
    ny: int = 33,
    nt: int = 64,
) -> OrbitRow:
    """Diameter of the S^1-orbit over x_base (n = 1, m = 1) for the metric of A(s).

    Coordinates: y = (x - x_base)/sqrt(s), theta unrolled on [-W, W] and
    the sheared fibre coordinate u = t - x_base theta (period 2 pi).  The
    orbit point (x_base, 0, t) has lifts (0, k, t - x_base k), k in Z.
    """
    if model.n != 1 or model.m != 1:
        raise ValueError("orbit scan is implemented for n = 1, m = 1")
    A = spade.family
    sigma = model.sigma
    rs = math.sqrt(s)
    W = windings
    grid = riemann.Grid(
        (
            riemann.Axis(-y_half, y_half, ny),
            riemann.Axis(-W, W, 2 * W * per_unit + 1),
            riemann.Axis(0.0, TWO_PI, nt, True),
        )
    )

    def metric(p):
        y, th = p[:, :1], p[:, 1:2]
        x = x_base + rs * y
        g = connection_metric_from_A(A.value(s, x, th), sigma, x)
        J = np.zeros((len(p), 3, 3))
        # (t, theta, x) in terms of (y, theta, u)
        J[:, 0, 1] = x_base
        J[:, 0, 2] = 1.0
        J[:, 1, 1] = 1.0
        J[:, 2, 0] = rs
        return np.swapaxes(J, 1, 2) @ g @ J

    g = riemann.build_graph(metric, grid, order=2, adaptive_axis=1)
    src = grid.nearest([[0.0, 0.0, 0.0]])
    dist = g.distances(src)[0].reshape(grid.shape)
    iy = ny // 2
    ks = np.arange(-W, W + 1)
    ith = (ks + W) * per_unit
    dt = TWO_PI / nt
    ts = np.arange(nt) * dt
    best = np.full(nt, np.inf)
    for k, i in zip(ks, ith):
        u = np.mod(ts - x_base * k, TWO_PI) / dt
        lo = np.floor(u).astype(int) % nt
        hi = (lo + 1) % nt
        w = u - np.floor(u)
        row = dist[iy, i]
        best = np.minimum(best, (1 - w) * row[lo] + w * row[hi])
    j = int(np.argmax(best))
    return OrbitRow(s, float(best[j]), float(ts[j]))


def orbit_diameter_scan(model: LocalModel, spade: SpadeFamily, x_base: float, s_series, **kw) -> list[OrbitRow]:
    return [orbit_diameter(model, spade, x_base, s, **kw) for s in s_series]
