"""Orthonormal bases on an interval: localized cells and global Fourier modes.

Basis indices run from 1 to N throughout. The spatial basis tiles the domain
with N equal cells of width dx and uses piecewise-constant elements 1/sqrt(dx)
on each cell; cell a is centered at x_a = x_min + (a - 1/2) dx and a boundary
point between two cells belongs to the lower-index cell. The Fourier basis
consists of the complex modes exp(i pi (a - N/2) x) / sqrt(2), which are
orthonormal on any interval of length 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, KindError

SPATIAL = "spatial"
FOURIER = "fourier"


@dataclass(frozen=True)
class BasisSpec:
    kind: str
    N: int
    domain: tuple[float, float]

    def __post_init__(self):
        if self.kind not in (SPATIAL, FOURIER):
            raise KindError(f"unknown basis kind {self.kind!r}")
        if self.N < 2:
            raise ValueError("basis dimension N must be at least 2")
        lo, hi = self.domain
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"invalid basis domain {self.domain}")
        if self.kind == FOURIER and abs((hi - lo) - 2.0) > 1e-12:
            raise ValueError("Fourier basis requires a domain of length 2")

    @property
    def dx(self) -> float:
        if self.kind != SPATIAL:
            raise KindError("dx is defined for the spatial basis only")
        lo, hi = self.domain
        return (hi - lo) / self.N


def spatial_basis(N: int, domain: tuple[float, float] = (-1.0, 1.0)) -> BasisSpec:
    return BasisSpec(kind=SPATIAL, N=N, domain=domain)


def fourier_basis(N: int, domain: tuple[float, float] = (-1.0, 1.0)) -> BasisSpec:
    return BasisSpec(kind=FOURIER, N=N, domain=domain)


def centers(spec: BasisSpec) -> np.ndarray:
    """Cell centers x_a for a = 1..N (spatial only)."""
    dx = spec.dx
    return spec.domain[0] + (np.arange(1, spec.N + 1) - 0.5) * dx


def edges(spec: BasisSpec) -> np.ndarray:
    """Cell edges x_min + j dx for j = 0..N (spatial only)."""
    dx = spec.dx
    return spec.domain[0] + np.arange(spec.N + 1) * dx


def grid_coords(spec: BasisSpec) -> tuple[Callable[[float], int], Callable[[int], float]]:
    """Return (cell_of, center_of) for the spatial grid.

    cell_of assigns boundary points to the lower-index cell and clamps the
    upper domain boundary into cell N; center_of(a) = x_min + (a - 1/2) dx.
    """
    if spec.kind != SPATIAL:
        raise KindError("grid coordinates are defined for the spatial basis only")
    lo, hi = spec.domain
    dx = spec.dx
    N = spec.N

    def cell_of(x: float) -> int:
        if not (lo <= x <= hi):
            raise DomainError(f"x={x!r} outside basis domain {spec.domain}")
        v = (x - lo) / dx
        r = round(v)
        if abs(v - r) <= 1e-12 * max(1.0, abs(v)):
            v = r  # points an ulp off a cell edge belong to the lower cell
        a = int(np.ceil(v))
        return min(max(a, 1), N)

    def center_of(a: int) -> float:
        if not 1 <= a <= N:
            raise IndexError(f"cell index {a} outside 1..{N}")
        return lo + (a - 0.5) * dx

    return cell_of, center_of


def basis_eval(spec: BasisSpec, a: int, x: float) -> complex:
    """Evaluate basis element e_a at x."""
    if not 1 <= a <= spec.N:
        raise IndexError(f"basis index {a} outside 1..{spec.N}")
    lo, hi = spec.domain
    if not (lo <= x <= hi):
        raise DomainError(f"x={x!r} outside basis domain {spec.domain}")
    if spec.kind == SPATIAL:
        cell_of, _ = grid_coords(spec)
        return 1.0 / np.sqrt(spec.dx) if cell_of(x) == a else 0.0
    m = a - spec.N / 2.0
    return np.exp(1j * np.pi * m * x) / np.sqrt(2.0)


def gram_matrix(spec: BasisSpec, points_per_cell: int = 64) -> np.ndarray:
    """Inner-product matrix <e_a, e_b> by composite Gauss-Legendre quadrature.

    The domain is divided into N panels with `points_per_cell` nodes each;
    for either basis this resolves the integrands far beyond 1e-10.
    """
    lo, hi = spec.domain
    panel_edges = np.linspace(lo, hi, spec.N + 1)
    u, w = np.polynomial.legendre.leggauss(points_per_cell)
    half = 0.5 * np.diff(panel_edges)
    mid = 0.5 * (panel_edges[:-1] + panel_edges[1:])
    xs = (mid[:, None] + half[:, None] * u[None, :]).ravel()
    ws = (half[:, None] * w[None, :]).ravel()

    if spec.kind == SPATIAL:
        cell = np.clip(np.ceil((xs - lo) / spec.dx).astype(int), 1, spec.N)
        E = np.zeros((spec.N, len(xs)))
        E[cell - 1, np.arange(len(xs))] = 1.0 / np.sqrt(spec.dx)
    else:
        m = np.arange(1, spec.N + 1) - spec.N / 2.0
        E = np.exp(1j * np.pi * np.outer(m, xs)) / np.sqrt(2.0)
    return (np.conj(E) * ws) @ E.T
