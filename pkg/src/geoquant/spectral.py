"""Spectra of the limit spaces: Hermite eigenfunctions of the Gaussian-space Laplacian.

Delta_k phi = -Laplacian phi + 2k <y, grad phi> acts on L^2(R^n, e^{-k|y|^2} dy).
Its eigenfunctions are products of H_{k,N}(xi) = e^{k xi^2} (d/dxi)^N e^{-k xi^2}
with eigenvalue 2k|N|.  In the weight-k sector of the limit the full
Laplacian adds k^2/sigma + k n.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

# --- Hermite polynomials ---------------------------------------------------


def hermite_coeffs(k: float, N: int) -> np.ndarray:
    """Ascending monomial coefficients of H_{k,N}.

    Differentiating e^{-k xi^2} H_{k,N} once gives the recurrence
    H_{k,N+1} = H_{k,N}' - 2k xi H_{k,N}.
    """
    c = np.array([1.0])
    for _ in range(N):
        d = np.polynomial.polynomial.polyder(c) if len(c) > 1 else np.zeros(1)
        shifted = np.concatenate([[0.0], c]) * (-2.0 * k)
        out = shifted.copy()
        out[: len(d)] += d
        c = out
    return c


def hermite(k: float, N: int, xi) -> np.ndarray | float:
    if k <= 0 or N < 0:
        raise ValueError("need k > 0 and N >= 0")
    v = np.polynomial.polynomial.polyval(xi, hermite_coeffs(k, N))
    return float(v) if np.ndim(v) == 0 else v


@dataclass(frozen=True)
class HermiteBasis:
    k: float
    N_max: int
    table: tuple = field(repr=False, default=())

    @classmethod
    def build(cls, k: float, N_max: int) -> "HermiteBasis":
        return cls(k, N_max, tuple(tuple(hermite_coeffs(k, N)) for N in range(N_max + 1)))

    def coeffs(self, N: int) -> np.ndarray:
        return np.array(self.table[N])


def hermite_ode_residual(k: float, N: int, xi) -> float:
    """max |-H'' + 2k xi H' - 2kN H| / (1 + |H|) over xi, from the coefficient table."""
    P = np.polynomial.polynomial
    c = hermite_coeffs(k, N)
    d1 = P.polyder(c) if len(c) > 1 else np.zeros(1)
    d2 = P.polyder(d1) if len(d1) > 1 else np.zeros(1)
    res = P.polyadd(P.polyadd(-d2, P.polymulx(d1) * 2 * k), -2 * k * N * c)
    xi = np.asarray(xi, dtype=float)
    return float(np.max(np.abs(P.polyval(xi, res)) / (1.0 + np.abs(P.polyval(xi, c)))))


def gauss_hermite(k: float, nodes: int):
    """Nodes and weights for integrals against e^{-k xi^2} dxi."""
    x, w = np.polynomial.hermite.hermgauss(nodes)
    return x / math.sqrt(k), w / math.sqrt(k)


def gram_matrix(k: float, N_max: int, nodes: int | None = None) -> np.ndarray:
    nodes = nodes or 2 * N_max + 2
    x, w = gauss_hermite(k, nodes)
    V = np.stack([hermite(k, N, x) for N in range(N_max + 1)])
    return (V * w) @ V.T


def orthonormality_check(k: float, N_max: int) -> float:
    """Largest off-diagonal entry of the normalized Gram matrix."""
    if N_max > 12:
        raise ValueError("N_max must be at most 12")
    G = gram_matrix(k, N_max)
    d = np.sqrt(np.diag(G))
    C = G / np.outer(d, d)
    return float(np.max(np.abs(C - np.diag(np.diag(C)))))


def eigenfunction_residual(k: float, N: tuple[int, ...], nodes: int = 24) -> float:
    """Weighted L2 norm of (Delta_k - 2k|N|) prod_i H_{k,N_i}(y_i), relative to the function's norm."""
    P = np.polynomial.polynomial
    n = len(N)
    x, w = gauss_hermite(k, nodes)
    c = [hermite_coeffs(k, Ni) for Ni in N]
    vals = [P.polyval(x, ci) for ci in c]
    d1 = [P.polyval(x, P.polyder(ci)) if len(ci) > 1 else np.zeros_like(x) for ci in c]
    d2 = [P.polyval(x, P.polyder(ci, 2)) if len(ci) > 2 else np.zeros_like(x) for ci in c]
    lam = 2 * k * sum(N)
    grids = np.meshgrid(*([np.arange(len(x))] * n), indexing="ij")
    idx = [g.ravel() for g in grids]
    phi = np.prod([vals[i][idx[i]] for i in range(n)], axis=0)
    out = -lam * phi
    for i in range(n):
        others = np.prod([vals[j][idx[j]] for j in range(n) if j != i], axis=0) if n > 1 else 1.0
        out = out + (-d2[i][idx[i]] + 2 * k * x[idx[i]] * d1[i][idx[i]]) * others
    wt = np.prod([w[idx[i]] for i in range(n)], axis=0)
    return float(math.sqrt(np.sum(wt * out**2)) / math.sqrt(np.sum(wt * phi**2)))


# --- exact sector spectra ---------------------------------------------------


@dataclass(frozen=True)
class SectorSpectrum:
    m: int
    l: int
    k: int
    sigma: float
    n: int
    entries: tuple[tuple[int, float, int], ...]  # (d, eigenvalue, multiplicity)

    @property
    def empty(self) -> bool:
        return len(self.entries) == 0


def multiplicity(d: int, n: int) -> int:
    return math.comb(d + n - 1, n - 1)


def count_multi_indices(d: int, n: int) -> int:
    """|{N in Z_{>=0}^n : |N| = d}| by enumeration."""
    return sum(1 for N in itertools.product(range(d + 1), repeat=n) if sum(N) == d)


def exact_sector_spectrum(m: int, l: int, n: int, sigma: float = 1.0, d_max: int = 5) -> SectorSpectrum:
    if l < 1 or m < 1:
        raise ValueError("need m >= 1 and l >= 1")
    k = m * l
    ent = tuple((d, 2 * k * d + k * k / sigma + k * n, multiplicity(d, n)) for d in range(d_max + 1))
    return SectorSpectrum(m, l, k, sigma, n, ent)


def weight_spectrum(m: int, weight: int, n: int, sigma: float = 1.0, d_max: int = 5) -> SectorSpectrum:
    """Spectrum in the rho_weight sector; empty unless m divides the weight."""
    if weight < 1:
        raise ValueError("weight must be positive")
    if weight % m:
        return SectorSpectrum(m, 0, weight, sigma, n, ())
    return exact_sector_spectrum(m, weight // m, n, sigma, d_max)


# --- discretization --------------------------------------------------------


@dataclass
class DiscretizedOperator:
    k: float
    n: int
    L: float
    h: float
    y: np.ndarray  # interior nodes per axis
    matrix: object = field(repr=False)  # symmetric, dense (n=1) or sparse
    form: str = "oscillator"

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def _axis(L, h):
    M = int(round(2 * L / h))
    if abs(M * h - 2 * L) > 1e-9 * L:
        raise ValueError("2L must be an integer multiple of h")
    return -L + h * np.arange(1, M)


def _oscillator_1d(k, y, h):
    main = 2.0 / h**2 + k * k * y * y - k
    off = -np.ones(len(y) - 1) / h**2
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def _drift_1d(k, y, h):
    # divergence form -(1/w)(w phi')' with w = e^{-k y^2}, conjugated by
    # w^{1/2}; ratios are formed in log space to avoid underflow
    yp = y + h / 2
    ym = y - h / 2
    main = (np.exp(-k * (yp**2 - y**2)) + np.exp(-k * (ym**2 - y**2))) / h**2
    mid = y[:-1] + h / 2
    off = -np.exp(-k * (mid**2 - 0.5 * (y[:-1] ** 2 + y[1:] ** 2))) / h**2
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def discretize_gaussian_laplacian(k: float, n: int, L: float, h: float, form: str = "oscillator") -> DiscretizedOperator:
    """Second-order finite differences with Dirichlet truncation at +-L.

    ``oscillator`` assembles -Laplacian + k^2|y|^2 - kn (conjugate to Delta_k by
    e^{-k|y|^2/2}); ``drift`` assembles the divergence form directly.
    """
    if L < 5 / math.sqrt(k) - 1e-12:
        raise ValueError(f"need L >= 5/sqrt(k) = {5 / math.sqrt(k):.4g}")
    if h > L / 32 + 1e-15:
        raise ValueError("need h <= L/32")
    if form not in ("oscillator", "drift"):
        raise ValueError(f"unknown form {form!r}")
    y = _axis(L, h)
    one = _oscillator_1d(k, y, h) if form == "oscillator" else _drift_1d(k, y, h)
    M = one
    for _ in range(n - 1):
        M = _kron_sum(M, one)
    if n == 1:
        M = M.toarray()
    return DiscretizedOperator(k, n, L, h, y, M, form)


def _kron_sum(A, B):
    Ia = sp.identity(A.shape[0], format="csr")
    Ib = sp.identity(B.shape[0], format="csr")
    return (sp.kron(A, Ib) + sp.kron(Ia, B)).tocsr()


class EigenError(RuntimeError):
    pass


def eigensolve(op: DiscretizedOperator, count: int, tol: float = 1e-8):
    """Lowest ``count`` eigenpairs, sorted; residuals checked."""
    if count > op.size // 4:
        raise ValueError("count must be at most a quarter of the matrix size")
    M = op.matrix
    if isinstance(M, np.ndarray):
        w, V = np.linalg.eigh(M)
        w, V = w[:count], V[:, :count]
    else:
        try:
            # fixed start vector: ARPACK's default is random, which breaks byte-identical output
            v0 = np.random.default_rng(0).standard_normal(M.shape[0])
            w, V = eigsh(M, k=count, sigma=-1.0, which="LM", tol=1e-12, maxiter=10_000, v0=v0)
        except Exception as exc:  # ARPACK non-convergence
            raise EigenError(str(exc)) from exc
        order = np.argsort(w)
        w, V = w[order], V[:, order]
    R = M @ V - V * w
    res = np.linalg.norm(R, axis=0) / np.linalg.norm(V, axis=0)
    scale = max(1.0, float(np.max(np.abs(w))))
    if np.any(res > tol * scale * 1e3):
        raise EigenError(f"eigen residual too large: {res.max():.3g}")
    return w, V


def refinement_slope(k: float = 1.0, L: float = 6.0, hs=(6 / 64, 6 / 128, 6 / 256), count: int = 5, form: str = "oscillator") -> tuple[float, np.ndarray]:
    """Log-log slope of the max eigenvalue error against h (1D)."""
    exact = 2 * k * np.arange(count)
    errs = []
    for h in hs:
        w, _ = eigensolve(discretize_gaussian_laplacian(k, 1, L, h, form), count)
        errs.append(float(np.max(np.abs(w - exact))))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    return float(slope), np.array(errs)


# --- dimension counts -------------------------------------------------------


@dataclass(frozen=True)
class BSLimit:
    m: int


@dataclass(frozen=True)
class EuclideanLimit:
    pass


def dim_W(limit_kind, n: int, sigma: float = 1.0) -> int:
    """Dimension of the weight-one eigenspace with eigenvalue n + 1."""
    if sigma != 1.0:
        raise ValueError("the eigenvalue n+1 statement assumes sigma = 1 (the offset is 1/sigma + n)")
    if isinstance(limit_kind, EuclideanLimit):
        return 0
    if not isinstance(limit_kind, BSLimit):
        raise TypeError("limit_kind must be BSLimit(m) or EuclideanLimit()")
    spec = weight_spectrum(limit_kind.m, 1, n, sigma, d_max=2)
    return sum(mult for _, lam, mult in spec.entries if abs(lam - (n + 1)) < 1e-12)
