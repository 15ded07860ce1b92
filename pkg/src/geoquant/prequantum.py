"""Action-angle local model, prequantum holonomy and Bohr-Sommerfeld fibers.

Conventions: theta lives in R^n/Z^n and the connection is
``nabla E = -i x_j dtheta^j (x) E``.  A parallel section along a curve solves
``df = i f <x, dtheta>``, so the holonomy around a fiber loop of winding ``w``
is ``exp(i <x, w>)`` and the fiber over ``x`` is m-BS iff ``x`` lies in
``(2 pi / m) Z^n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lattice_cover import Homomorphism, KernelLattice, find_w0, is_surjective, kernel_basis


@dataclass(frozen=True)
class LocalModel:
    n: int
    R: float = 1.0
    sigma: float = 1.0
    phi: Homomorphism | None = None
    w0: tuple[int, ...] | None = None
    lattice: KernelLattice = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.R <= 1:
            raise ValueError("R must satisfy 0 < R <= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        phi = self.phi or Homomorphism(self.n, 1, (0,) * self.n)
        if phi.n != self.n:
            raise ValueError("Phi dimension does not match n")
        object.__setattr__(self, "phi", phi)
        w0 = self.w0
        if w0 is None and is_surjective(phi):
            w0 = find_w0(phi)
        elif w0 is not None:
            w0 = tuple(int(v) for v in w0)
            if phi(w0) != 1 % phi.m:
                raise ValueError("Phi(w0) must equal 1")
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "lattice", kernel_basis(phi))

    @property
    def m(self) -> int:
        return self.phi.m


@dataclass(frozen=True)
class FiberLoop:
    x: tuple[float, ...]
    winding: tuple[int, ...]


@dataclass(frozen=True)
class BSClass:
    kind: str  # "StrictBS" or "NotBSUpTo"
    m: int
    witnesses: tuple[complex, ...] = ()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "m": self.m}


def holonomy(model: LocalModel, loop: FiberLoop) -> complex:
    x = np.asarray(loop.x, dtype=float)
    w = np.asarray(loop.winding, dtype=float)
    return complex(np.exp(1j * float(x @ w)))


def holonomy_ode(x, winding, steps: int = 10_000):
    """RK4 integration of df/dtau = i f <x, w> along theta(tau) = tau w.

    Broadcasts over leading axes of ``x`` and ``winding``.
    """
    rate = 1j * np.sum(np.asarray(x, dtype=float) * np.asarray(winding, dtype=float), axis=-1)
    h = 1.0 / steps
    f = np.ones_like(rate)
    for _ in range(steps):
        k1 = rate * f
        k2 = rate * (f + 0.5 * h * k1)
        k3 = rate * (f + 0.5 * h * k2)
        k4 = rate * (f + h * k3)
        f = f + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return complex(f) if f.ndim == 0 else f


def min_root_separation(m_max: int) -> float:
    """Smallest chord between distinct roots of unity of orders <= m_max.

    Distinct Farey fractions with denominators <= m_max differ by at least
    1/m_max^2 (attained by neighbours), giving chord 2 sin(pi/m_max^2).
    """
    return 2.0 * math.sin(math.pi / (m_max * m_max)) if m_max > 1 else 2.0


def classify_fiber(model: LocalModel, x, m_max: int = 1000, tol: float = 1e-6) -> BSClass:
    if m_max < 1 or tol <= 0:
        raise ValueError("need m_max >= 1 and tol > 0")
    sep = min_root_separation(m_max)
    if tol >= sep:
        raise ValueError(f"tol={tol} is ambiguous: roots of unity of order <= {m_max} can be {sep:.3g} apart")
    hol = np.exp(1j * np.atleast_1d(np.asarray(x, dtype=float)))
    for m in range(1, m_max + 1):
        if np.all(np.abs(hol**m - 1.0) < tol):
            # the subgroup generated is Z/m exactly when the orders' lcm is m
            orders = [_order(h, m, tol) for h in hol]
            if math.lcm(*orders) == m:
                return BSClass("StrictBS", m, tuple(complex(h) for h in hol))
    return BSClass("NotBSUpTo", m_max, tuple(complex(h) for h in hol))


def _order(h: complex, m: int, tol: float) -> int:
    for d in range(1, m + 1):
        if m % d == 0 and abs(h**d - 1.0) < tol:
            return d
    return m


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def parallel_transport(model: LocalModel, path: Sequence[Sequence[float]], panels: int = 64) -> complex:
    """Transport factor exp(i int x_j dtheta^j) along a piecewise-linear path.

    ``path`` is a list of vertices (x_1..x_n, theta_1..theta_n) in the
    unrolled cover; each segment uses composite 4-point Gauss quadrature.
    """
    pts = np.asarray(path, dtype=float)
    n = model.n
    if pts.ndim != 2 or pts.shape[1] != 2 * n:
        raise ValueError(f"path vertices must have length {2 * n}")
    total = 0.0
    u = (np.arange(panels)[:, None] + 0.5 * (_GL_NODES[None, :] + 1.0)) / panels
    wts = np.broadcast_to(_GL_WEIGHTS / (2.0 * panels), u.shape)
    for a, b in zip(pts[:-1], pts[1:]):
        xa, xb = a[:n], b[:n]
        dth = b[n:] - a[n:]
        xs = xa[None, None, :] + u[..., None] * (xb - xa)[None, None, :]
        total += float(np.sum(wts * (xs @ dth)))
    return complex(np.exp(1j * total))
