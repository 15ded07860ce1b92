"""Matrix fields A = P + iQ, the metrics they induce, and the rescaling maps.

Frame convention everywhere: coordinates are ordered (t, theta_1..theta_n,
x_1..x_n) for the connection metric and (theta, x) for the base metric.
Arrays are batched: a point set has shape (..., n) and matrices (..., k, k).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import exprlang as el

Q_EPS = 1e-12


class DegenerateStructure(ValueError):
    """Im A is not positive definite where it was needed."""


# --- fields ----------------------------------------------------------------


class AField:
    """A(s, x, theta): complex symmetric n x n matrices with derivative access.

    ``fn(s, x, theta)`` receives batched points and returns (..., n, n).
    Derivatives default to Richardson-extrapolated central differences.
    """

    def __init__(self, n: int, fn: Callable, h: float = 1e-5):
        self.n = n
        self._fn = fn
        self.h = h

    def value(self, s, x, th) -> np.ndarray:
        x, th = _pts(x, th, self.n)
        return np.asarray(self._fn(s, x, th), dtype=complex)

    def _fd(self, s, x, th, wrt: str) -> np.ndarray:
        x, th = _pts(x, th, self.n)
        out = []
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = 1.0

            def d(h):
                if wrt == "theta":
                    return (self.value(s, x, th + h * e) - self.value(s, x, th - h * e)) / (2 * h)
                return (self.value(s, x + h * e, th) - self.value(s, x - h * e, th)) / (2 * h)

            out.append((4.0 * d(self.h / 2) - d(self.h)) / 3.0)
        return np.stack(out, axis=-3)

    def d_theta(self, s, x, th) -> np.ndarray:
        """Array [..., i, j, k] = dA_jk / dtheta^i."""
        return self._fd(s, x, th, "theta")

    def d_x(self, s, x, th) -> np.ndarray:
        """Array [..., i, j, k] = dA_jk / dx_i."""
        return self._fd(s, x, th, "x")


class ExprField(AField):
    """Field whose entries are exprlang expressions in x_j, th_j and s."""

    def __init__(self, n: int, entries: Sequence[Sequence[el.Expr | str]]):
        rows = [[el.parse(e, n) if isinstance(e, str) else e for e in row] for row in entries]
        if len(rows) != n or any(len(r) != n for r in rows):
            raise ValueError(f"field needs an {n}x{n} matrix of expressions")
        self.entries = rows
        self.xs, self.ths = el.var_names(n)
        super().__init__(n, self._eval_entries)
        self._dth = None
        self._dx = None

    def _bind(self, s, x, th):
        b = {"s": s}
        for j in range(self.n):
            b[self.xs[j]] = x[..., j]
            b[self.ths[j]] = th[..., j]
        return b

    def _eval_entries(self, s, x, th, table=None):
        table = self.entries if table is None else table
        b = self._bind(s, x, th)
        shape = np.broadcast_shapes(x.shape[:-1], th.shape[:-1])
        out = np.empty(shape + (self.n, self.n), dtype=complex)
        cache: dict = {}
        for i in range(self.n):
            for j in range(self.n):
                e = table[i][j]
                if e not in cache:
                    cache[e] = el.evaluate(e, b)
                out[..., i, j] = cache[e]
        return out

    def _deriv_table(self, names):
        return [
            [[el.diff(self.entries[j][k], v) for k in range(self.n)] for j in range(self.n)]
            for v in names
        ]

    def d_theta(self, s, x, th):
        if self._dth is None:
            self._dth = self._deriv_table(self.ths)
        x, th = _pts(x, th, self.n)
        return np.stack([self._eval_entries(s, x, th, t) for t in self._dth], axis=-3)

    def d_x(self, s, x, th):
        if self._dx is None:
            self._dx = self._deriv_table(self.xs)
        x, th = _pts(x, th, self.n)
        return np.stack([self._eval_entries(s, x, th, t) for t in self._dx], axis=-3)

    def to_strings(self) -> list[list[str]]:
        return [[el.to_string(e) for e in row] for row in self.entries]


def _pts(x, th, n):
    x = np.asarray(x, dtype=float)
    th = np.asarray(th, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if th.ndim == 0:
        th = th.reshape(1)
    if x.shape[-1] != n or th.shape[-1] != n:
        raise ValueError(f"points must have trailing dimension {n}")
    return x, th


def _as_expr_matrix(entries, n):
    return [[el.parse(e, n) if isinstance(e, str) else e for e in row] for row in entries]


@dataclass
class SpadeFamily:
    """A(s) = s A0(x, theta) + s^2 R(x, theta) with Im A0 positive definite.

    ``K`` bounds the remainder; ``remainder_bound`` estimates it on a grid.
    """

    n: int
    a0_entries: list
    rem_entries: list | None = None
    K: float | None = None
    name: str = "custom"
    a0: ExprField = field(init=False, repr=False)
    family: ExprField = field(init=False, repr=False)

    def __post_init__(self):
        a0 = _as_expr_matrix(self.a0_entries, self.n)
        for row in a0:
            for e in row:
                if "s" in el.free_vars(e):
                    raise ValueError("A0 must not depend on s")
        self.a0 = ExprField(self.n, a0)
        s = el.Var("s")
        rem = _as_expr_matrix(self.rem_entries, self.n) if self.rem_entries is not None else None
        fam = []
        for i in range(self.n):
            row = []
            for j in range(self.n):
                e = el.mul(s, a0[i][j])
                if rem is not None:
                    e = el.add(e, el.mul(el.power(s, 2), rem[i][j]))
                row.append(e)
            fam.append(row)
        self.family = ExprField(self.n, fam)

    def remainder_bound(self, s_values, x_box: float, grid: int = 16) -> float:
        """max over s and a grid of |A(s) - s A0| / s^2 (entrywise, with first derivatives)."""
        x, th = _box_grid(self.n, x_box, grid)
        worst = 0.0
        for s in s_values:
            parts = [
                (self.family.value(s, x, th) - s * self.a0.value(0.0, x, th)),
                (self.family.d_theta(s, x, th) - s * self.a0.d_theta(0.0, x, th)),
                (self.family.d_x(s, x, th) - s * self.a0.d_x(0.0, x, th)),
            ]
            worst = max(worst, max(float(np.max(np.abs(p))) for p in parts) / s**2)
        return worst


def _box_grid(n, x_box, grid):
    ax_x = np.linspace(-x_box, x_box, grid)
    ax_t = np.arange(grid) / grid
    mesh = np.meshgrid(*([ax_x] * n + [ax_t] * n), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    return pts[:, :n], pts[:, n:]


def frozen_family(spade: SpadeFamily) -> ExprField:
    """A'(s, x, theta) = s A0(0, theta)."""
    zero = {x: el.Num(0.0) for x in el.var_names(spade.n)[0]}
    s = el.Var("s")
    rows = [[el.mul(s, el.substitute(e, zero)) for e in row] for row in spade.a0.entries]
    return ExprField(spade.n, rows)


# --- pointwise linear algebra ---------------------------------------------


def split(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    A = np.asarray(A, dtype=complex)
    return A.real.copy(), A.imag.copy()


def _check_q(Q: np.ndarray):
    ev = np.linalg.eigvalsh(0.5 * (Q + np.swapaxes(Q, -1, -2)))
    if np.any(ev[..., 0] < Q_EPS):
        raise DegenerateStructure(f"Im A not positive definite (min eigenvalue {float(np.min(ev[..., 0])):.3g})")


def theta_matrix(A: np.ndarray) -> np.ndarray:
    """Theta = Q + P Q^{-1} P."""
    P, Q = split(A)
    _check_q(Q)
    return Q + P @ np.linalg.solve(Q, P)


def j_matrix_from_A(A: np.ndarray) -> np.ndarray:
    """J on the (d/dtheta, d/dx) basis: columns are the images of basis vectors."""
    P, Q = split(A)
    _check_q(Q)
    Qi = np.linalg.inv(Q)
    Th = Q + P @ Qi @ P
    top = np.concatenate([-Qi @ P, Qi], axis=-1)
    bot = np.concatenate([-Th, P @ Qi], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def j_matrix(A: AField, s, x, th) -> np.ndarray:
    return j_matrix_from_A(A.value(s, x, th))


def omega_matrix(n: int) -> np.ndarray:
    """omega = dx_i ^ dtheta^i as a bilinear form on (theta, x) vectors."""
    eye = np.eye(n)
    z = np.zeros((n, n))
    return np.block([[z, -eye], [eye, z]])


def base_metric_from_A(A: np.ndarray) -> np.ndarray:
    P, Q = split(A)
    _check_q(Q)
    Qi = np.linalg.inv(Q)
    Th = Q + P @ Qi @ P
    off = -P @ Qi
    return np.concatenate(
        [np.concatenate([Th, off], axis=-1), np.concatenate([np.swapaxes(off, -1, -2), Qi], axis=-1)],
        axis=-2,
    )


def base_metric(A: AField, s, x, th) -> np.ndarray:
    return base_metric_from_A(A.value(s, x, th))


def _sym_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)


def base_metric_completed_square(A: np.ndarray) -> np.ndarray:
    """g_A as |sqrt(Th) dtheta - sqrt(Th)^{-1} P Q^{-1} dx|^2 + dx (Q^{-1} - Q^{-1} P Th^{-1} P Q^{-1}) dx."""
    P, Q = split(A)
    _check_q(Q)
    Th = Q + P @ np.linalg.solve(Q, P)
    R = _sym_sqrt(Th)
    Ri = np.linalg.inv(R)
    Qi = np.linalg.inv(Q)
    L = np.concatenate([R, -Ri @ P @ Qi], axis=-1)
    g = np.swapaxes(L, -1, -2) @ L
    n = A.shape[-1]
    g[..., n:, n:] += Qi - Qi @ P @ np.linalg.solve(Th, P @ Qi)
    return g


def connection_metric_from_A(A: np.ndarray, sigma: float, x: np.ndarray) -> np.ndarray:
    """sigma (dt - x_j dtheta^j)^2 + g_A on (t, theta, x)."""
    n = A.shape[-1]
    g = base_metric_from_A(A)
    x = np.broadcast_to(np.asarray(x, dtype=float), g.shape[:-2] + (n,))
    a = np.concatenate([np.ones(x.shape[:-1] + (1,)), -x, np.zeros_like(x)], axis=-1)
    out = sigma * a[..., :, None] * a[..., None, :]
    out[..., 1:, 1:] += g
    return out


def connection_metric(A: AField, sigma: float, s, x, th) -> np.ndarray:
    return connection_metric_from_A(A.value(s, x, th), sigma, x)


def lag_type(A: np.ndarray, tol: float = 1e-10) -> int:
    A = np.asarray(A, dtype=complex)
    sv = np.linalg.svd(A - A.conj(), compute_uv=False)
    return int(A.shape[-1] - np.sum(sv > tol))


def integrability_tensor(A: AField, s, x, th) -> np.ndarray:
    """[..., i, j, k] = dA_jk/dth^i - dA_ik/dth^j + A_il dA_jk/dx_l - A_jl dA_ik/dx_l."""
    a = A.value(s, x, th)
    dt = A.d_theta(s, x, th)
    dx = A.d_x(s, x, th)
    term = dt - np.swapaxes(dt, -3, -2)
    mix = np.einsum("...il,...ljk->...ijk", a, dx)
    return term + mix - np.swapaxes(mix, -3, -2)


def integrability_residual(A: AField, s, x, th) -> float:
    return float(np.max(np.abs(integrability_tensor(A, s, x, th))))


# --- frozen data and maps -------------------------------------------------


@dataclass(frozen=True)
class FrozenData:
    """P0(0, .) = Pbar + Hess H, Q0(0, .) = Qbar; H stored as a Fourier series."""

    Pbar: np.ndarray
    Qbar: np.ndarray
    modes: np.ndarray  # (K, n) integer frequencies
    coefs: np.ndarray  # (K,) complex; H = Re sum c exp(2 pi i k.theta)

    @property
    def n(self) -> int:
        return self.Pbar.shape[0]

    @property
    def Thetabar(self) -> np.ndarray:
        return self.Qbar + self.Pbar @ np.linalg.solve(self.Qbar, self.Pbar)

    @property
    def Sbar(self) -> np.ndarray:
        R = _sym_sqrt(self.Thetabar)
        Ri = np.linalg.inv(R)
        S = Ri @ self.Pbar @ np.linalg.inv(self.Qbar) @ R
        return 0.5 * (S + S.T)

    def _phase(self, th):
        th = np.asarray(th, dtype=float)
        return np.exp(2j * np.pi * (th @ self.modes.T))

    def H(self, th) -> np.ndarray:
        if len(self.coefs) == 0:
            return np.zeros(np.shape(th)[:-1])
        return np.real(self._phase(th) @ self.coefs)

    def grad_H(self, th) -> np.ndarray:
        th = np.asarray(th, dtype=float)
        if len(self.coefs) == 0:
            return np.zeros(th.shape)
        c = (2j * np.pi) * self.coefs[:, None] * self.modes
        return np.real(self._phase(th) @ c)

    def hess_H(self, th) -> np.ndarray:
        th = np.asarray(th, dtype=float)
        n = self.n
        if len(self.coefs) == 0:
            return np.zeros(th.shape[:-1] + (n, n))
        k = self.modes.astype(float)
        c = -4.0 * np.pi**2 * self.coefs[:, None, None] * k[:, :, None] * k[:, None, :]
        return np.real(np.tensordot(self._phase(th), c, axes=1))


def decompose_P0(a0: AField, grid: int = 64, tol: float = 1e-8) -> FrozenData:
    """Split A0(0, .) into Pbar + Hess H and Qbar."""
    n = a0.n
    axes = [np.arange(grid) / grid] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    th = np.stack(mesh, axis=-1)
    x = np.zeros_like(th)
    A = a0.value(0.0, x, th)
    P, Q = A.real, A.imag
    dP = a0.d_theta(0.0, x, th).real  # [..., i, j, k]
    asym = np.max(np.abs(dP - np.swapaxes(dP, -3, -2)))
    if asym > tol:
        raise ValueError(f"dP0_jk/dth^i is not symmetric in (i, j): residual {asym:.3g}")
    Qbar = Q.reshape(-1, n, n).mean(axis=0)
    qdev = np.max(np.abs(Q - Qbar))
    if qdev > tol:
        raise ValueError(f"Q0(0, .) depends on theta: deviation {qdev:.3g}")
    Pbar = P.reshape(-1, n, n).mean(axis=0)
    spec = np.fft.fftn(P - Pbar, axes=tuple(range(n))) / grid**n
    freqs = np.fft.fftfreq(grid, d=1.0 / grid).round().astype(int)
    kmesh = np.stack(np.meshgrid(*([freqs] * n), indexing="ij"), axis=-1)
    kmax = min(32, grid // 2 - 1)
    modes, coefs = [], []
    for idx in np.ndindex(*([grid] * n)):
        k = kmesh[idx]
        if not np.any(k) or np.max(np.abs(k)) > kmax:
            continue
        c = spec[idx]
        if np.max(np.abs(c)) < 1e-12:
            continue
        denom = -4.0 * np.pi**2 * np.outer(k, k)
        mask = denom != 0
        if np.any(np.abs(c[~mask]) > tol):
            raise ValueError(f"Fourier mode {tuple(k)} of P0 is not a Hessian")
        vals = c[mask] / denom[mask]
        if np.max(np.abs(vals - vals[0])) > tol:
            raise ValueError(f"inconsistent H recovery at mode {tuple(k)}")
        modes.append(k)
        coefs.append(vals[0])
    modes_a = np.array(modes, dtype=int).reshape(-1, n)
    return FrozenData(Pbar=0.5 * (Pbar + Pbar.T), Qbar=0.5 * (Qbar + Qbar.T), modes=modes_a, coefs=np.array(coefs, dtype=complex))


def map_F(fd: FrozenData, s: float, direction: int, x, th):
    x = np.asarray(x, dtype=float)
    return x + direction * s * fd.grad_H(th), np.asarray(th, dtype=float)


def map_Fhat(fd: FrozenData, s: float, direction: int, x, th, t):
    x2, th2 = map_F(fd, s, direction, x, th)
    return x2, th2, np.asarray(t, dtype=float) + direction * s * fd.H(th)


def map_phi(m: int, s: float, Thetabar: np.ndarray, x, th, t):
    """(x, theta, t) -> (y, t) with y = (s Thetabar)^{-1/2} x."""
    Ri = np.linalg.inv(_sym_sqrt(s * np.asarray(Thetabar, dtype=float)))
    y = np.asarray(x, dtype=float) @ Ri.T
    return y, np.asarray(t, dtype=float)


def limit_metric(m: int, sigma: float, fd: FrozenData | np.ndarray, gauge: str, y) -> np.ndarray:
    """Metric on R^n x S^1 at y, in (dt, dy) order; t has period 2 pi."""
    S = fd.Sbar if isinstance(fd, FrozenData) else np.asarray(fd, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    c = sigma / (1.0 + sigma * np.sum(y * y, axis=-1))
    if gauge == "submersion":
        a = np.concatenate([np.full(y.shape[:-1] + (1,), 1.0 / m), -(y @ S)], axis=-1)
    elif gauge == "diagonal":
        a = np.concatenate([np.full(y.shape[:-1] + (1,), 1.0 / m), np.zeros_like(y)], axis=-1)
    else:
        raise ValueError(f"unknown gauge {gauge!r}")
    g = c[..., None, None] * a[..., :, None] * a[..., None, :]
    g[..., 1:, 1:] += np.eye(n)
    return g


def gauge_pullback(m: int, sigma: float, S: np.ndarray, y) -> np.ndarray:
    """Pull the submersion gauge back along (y, t) -> (y, t + m y.S.y / 2)."""
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    Jac = np.broadcast_to(np.eye(n + 1), y.shape[:-1] + (n + 1, n + 1)).copy()
    Jac[..., 0, 1:] = m * (y @ S)
    g = limit_metric(m, sigma, S, "submersion", y)
    return np.swapaxes(Jac, -1, -2) @ g @ Jac
