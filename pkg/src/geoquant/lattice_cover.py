"""Integer lattice algebra for the cover R^n / Ker(Phi) and its deck action."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Homomorphism:
    """Phi(k) = <w, k> mod m on Z^n."""

    n: int
    m: int
    w: tuple[int, ...]

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("need n >= 1 and m >= 1")
        if len(self.w) != self.n:
            raise ValueError(f"w has length {len(self.w)}, expected {self.n}")
        object.__setattr__(self, "w", tuple(int(v) % self.m for v in self.w))

    def __call__(self, k) -> int:
        return int(np.dot(self.w, np.asarray(k, dtype=np.int64))) % self.m


@dataclass(frozen=True)
class KernelLattice:
    basis: np.ndarray = field(repr=False)  # columns generate Ker Phi
    covolume: int

    def __post_init__(self):
        self.basis.setflags(write=False)


def is_surjective(phi: Homomorphism) -> bool:
    return math.gcd(*phi.w, phi.m) == 1


def _hnf_columns(M: np.ndarray) -> np.ndarray:
    """Column-style Hermite normal form of an integer matrix with full row rank.

    Returns an n x n lower-triangular basis of the column lattice of ``M``.
    Plain Python ints are used so entries never overflow.
    """
    rows = M.shape[0]
    cols = [[int(v) for v in M[:, j]] for j in range(M.shape[1])]
    out = []
    for r in range(rows):
        live = [c for c in cols if c[r] != 0]
        rest = [c for c in cols if c[r] == 0]
        # Euclid on row r across the live columns
        while len(live) > 1:
            live.sort(key=lambda c: abs(c[r]))
            piv = live[0]
            nxt = [piv]
            for c in live[1:]:
                q = c[r] // piv[r]
                c = [a - q * b for a, b in zip(c, piv)]
                (nxt if c[r] != 0 else rest).append(c)
            live = nxt
        if not live:
            raise ValueError("lattice is not full rank")
        piv = live[0]
        if piv[r] < 0:
            piv = [-a for a in piv]
        out.append(piv)
        cols = rest
    # reduce entries below the diagonal into [0, pivot)
    for i in range(rows):
        for j in range(i):
            q = out[j][i] // out[i][i]
            out[j] = [a - q * b for a, b in zip(out[j], out[i])]
    return np.array(out, dtype=np.int64).T


def kernel_basis(phi: Homomorphism) -> KernelLattice:
    """Basis of Ker Phi = {k : <w,k> = 0 mod m} in Hermite normal form.

    Ker Phi is the projection to the first n coordinates of the integer kernel
    of the row [w | m].  That kernel is read off a unimodular column reduction
    of the row, and the projected generators are put in HNF.
    """
    n, m = phi.n, phi.m
    row = list(phi.w) + [m]
    # unimodular column operations reducing `row` to (g, 0, ..., 0); the
    # accumulated transform's trailing columns span the integer kernel
    U = [[int(i == j) for j in range(n + 1)] for i in range(n + 1)]
    vals = row[:]
    while sum(1 for v in vals if v != 0) > 1:
        nz = [j for j in range(n + 1) if vals[j] != 0]
        p = min(nz, key=lambda j: abs(vals[j]))
        for j in nz:
            if j == p:
                continue
            q = vals[j] // vals[p]
            vals[j] -= q * vals[p]
            for i in range(n + 1):
                U[i][j] -= q * U[i][p]
    piv = next((j for j in range(n + 1) if vals[j] != 0), None)
    gens = [[U[i][j] for i in range(n)] for j in range(n + 1) if j != piv]
    B = _hnf_columns(np.array(gens, dtype=np.int64).T)
    cov = abs(int(round(np.linalg.det(B.astype(float)))))
    return KernelLattice(basis=B, covolume=cov)


def find_w0(phi: Homomorphism) -> tuple[int, ...]:
    """Lexicographically smallest w0 in {0..m-1}^n with Phi(w0) = 1."""
    if not is_surjective(phi):
        raise ValueError("Phi is not surjective; no w0 with Phi(w0) = 1")
    if phi.m == 1:
        return (0,) * phi.n
    for cand in itertools.product(range(phi.m), repeat=phi.n):
        if phi(cand) == 1:
            return tuple(int(c) for c in cand)
    raise AssertionError("unreachable for surjective Phi")


@dataclass(frozen=True)
class DeckElement:
    k: int
    w0: tuple[int, ...]


def reduce_mod_kernel(lat: KernelLattice, theta) -> np.ndarray:
    """Representative of theta + Ker Phi with basis coefficients in (-1/2, 1/2]."""
    B = lat.basis.astype(float)
    theta = np.asarray(theta, dtype=float)
    coef = np.linalg.solve(B, theta.T if theta.ndim > 1 else theta)
    shift = np.ceil(coef - 0.5)
    return theta - (B @ shift).T if theta.ndim > 1 else theta - B @ shift


def deck_apply(phi: Homomorphism, lat: KernelLattice, w0, k: int, point):
    """Action of k in Z/m on (x, theta, t)."""
    w0 = tuple(int(v) for v in w0)
    if phi(w0) != 1 % phi.m:
        raise ValueError(f"Phi(w0) = {phi(w0)} != 1")
    x, theta, t = point
    k = int(k) % phi.m
    theta = np.asarray(theta, dtype=float) + k * np.asarray(w0, dtype=float)
    theta = reduce_mod_kernel(lat, theta)
    t = math.fmod(float(t) - TWO_PI * k / phi.m, TWO_PI)
    if t < 0:
        t += TWO_PI
    return (np.asarray(x, dtype=float), theta, t)
