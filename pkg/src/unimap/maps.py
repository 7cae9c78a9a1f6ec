"""Differentiable invertible 1-D maps and their classical reference dynamics.

A map is described by its forward rule X(x), its Jacobian X'(x), a closed
domain, and an optional closed-form inverse. All rules must accept both
scalars and numpy arrays. Everything here is pure and immutable, so map
objects can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateMapError,
    DomainError,
    NonMonotoneError,
    NotInImageError,
    OrbitEscapedError,
    SingularJacobianError,
)

Rule = Callable[..., np.ndarray]

# central finite-difference step for derivative cross-checks
FD_STEP = 1e-6

_SCAN_POINTS = 1000       # monotonicity / invariant scans
_BRACKET_POINTS = 2000    # root bracketing scans


@dataclass(frozen=True)
class MapSpec:
    """A 1-D map X with Jacobian J = X' on a closed interval."""

    name: str
    forward: Rule
    jacobian: Rule
    domain: tuple[float, float]
    inverse: Optional[Rule] = None

    def __post_init__(self):
        lo, hi = self.domain
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise DomainError(f"map '{self.name}': invalid domain {self.domain}")

    def contains(self, x: float) -> bool:
        lo, hi = self.domain
        return lo <= x <= hi


@dataclass(frozen=True)
class FixedPointReport:
    """A root of X(x) = x with its multiplier J(x_c)."""

    location: float
    multiplier: float
    classification: str  # "attracting" | "repelling" | "marginal"


@dataclass(frozen=True)
class ExtendedMap:
    """Area-preserving lift (x, p) -> (X(x), p / J(x)) of a 1-D map."""

    base: MapSpec

    def forward(self, x: float, p: float) -> tuple[float, float]:
        j = eval_jacobian(self.base, x)
        return eval_forward(self.base, x), p / j

    def jacobian_matrix(self, x: float, p: float) -> np.ndarray:
        """2x2 Jacobian of the lifted map at (x, p).

        The off-diagonal d(p/J)/dx needs J', which MapSpec does not carry, so
        it is taken by central finite difference. The determinant does not
        depend on it: the (x, p) block is triangular.
        """
        j = eval_jacobian(self.base, x)
        lo, hi = self.base.domain
        h = FD_STEP
        xl, xr = max(x - h, lo), min(x + h, hi)
        jprime = (self.base.jacobian(xr) - self.base.jacobian(xl)) / (xr - xl)
        return np.array([[j, 0.0], [-p * jprime / j**2, 1.0 / j]])

    def jacobian_det(self, x: float, p: float) -> float:
        m = self.jacobian_matrix(x, p)
        return m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]


# ---------------------------------------------------------------------------
# basic evaluation

def _require_in_domain(m: MapSpec, x: float) -> None:
    if not m.contains(x):
        raise DomainError(f"x={x!r} outside domain {m.domain} of map '{m.name}'")


def eval_forward(m: MapSpec, x: float) -> float:
    """Evaluate X(x); raises DomainError outside the domain."""
    _require_in_domain(m, x)
    y = float(m.forward(x))
    if not np.isfinite(y):
        raise DomainError(f"map '{m.name}' not finite at x={x!r}")
    return y


def eval_jacobian(m: MapSpec, x: float) -> float:
    """Evaluate J(x) = X'(x); raises SingularJacobianError if |J| < 1e-14."""
    _require_in_domain(m, x)
    j = float(m.jacobian(x))
    if abs(j) < 1e-14:
        raise SingularJacobianError(f"map '{m.name}': |J({x!r})| < 1e-14")
    return j


def monotone_sign(m: MapSpec, points: int = _SCAN_POINTS) -> int:
    """Sign of J on the domain; raises NonMonotoneError if it changes sign."""
    xs = np.linspace(m.domain[0], m.domain[1], points)
    js = np.asarray(m.jacobian(xs), dtype=float)
    if np.any(js > 0) and np.any(js < 0):
        raise NonMonotoneError(f"map '{m.name}': Jacobian changes sign on domain")
    if np.all(js == 0):
        raise SingularJacobianError(f"map '{m.name}': Jacobian vanishes on domain")
    return 1 if js[np.nonzero(js)[0][0]] > 0 else -1


def image_interval(m: MapSpec) -> tuple[float, float]:
    """Image (lo, hi) of the domain under a monotone map."""
    a = float(m.forward(m.domain[0]))
    b = float(m.forward(m.domain[1]))
    return (a, b) if a <= b else (b, a)


# ---------------------------------------------------------------------------
# inversion

def _invert_batch(m: MapSpec, ys: np.ndarray, tol: float) -> np.ndarray:
    """Vectorized bracketing bisection + Newton polish for monotone maps."""
    sign = monotone_sign(m)
    xs = np.linspace(m.domain[0], m.domain[1], _BRACKET_POINTS + 1)
    fx = sign * np.asarray(m.forward(xs), dtype=float)
    g = sign * np.asarray(ys, dtype=float)
    idx = np.clip(np.searchsorted(fx, g), 1, len(xs) - 1)
    lo = xs[idx - 1].copy()
    hi = xs[idx].copy()
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        below = sign * np.asarray(m.forward(mid), dtype=float) < g
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    for _ in range(50):
        f = np.asarray(m.forward(x), dtype=float) - ys
        if np.all(np.abs(f) <= tol):
            break
        j = np.asarray(m.jacobian(x), dtype=float)
        step = np.where(np.abs(j) > 1e-14, f / np.where(j == 0, 1.0, j), 0.0)
        x = np.clip(x - step, lo, hi)
    return x


def invert_point(m: MapSpec, xbar: float, tol: float = 1e-12) -> float:
    """Solve X(x) = xbar for x in the domain.

    Uses the closed-form inverse when the map carries one; otherwise brackets
    the root on a 2000-point scan and polishes with bisection plus up to 50
    Newton steps. Raises NotInImageError when xbar is outside the image of
    the domain and NonMonotoneError when the Jacobian changes sign.
    """
    monotone_sign(m)  # rejects maps whose Jacobian changes sign
    lo, hi = image_interval(m)
    pad = tol + 1e-12 * max(1.0, abs(lo), abs(hi))
    if not (lo - pad <= xbar <= hi + pad):
        raise NotInImageError(
            f"xbar={xbar!r} outside image [{lo!r}, {hi!r}] of map '{m.name}'"
        )
    if m.inverse is not None:
        x = float(m.inverse(xbar))
        return min(max(x, m.domain[0]), m.domain[1])
    x = float(_invert_batch(m, np.array([xbar]), tol)[0])
    if abs(float(m.forward(x)) - xbar) > max(tol, 1e-9):
        raise NotInImageError(
            f"inversion of xbar={xbar!r} did not converge for map '{m.name}'"
        )
    return x


# ---------------------------------------------------------------------------
# fixed points and orbits

def find_fixed_points(m: MapSpec, tol: float = 1e-10) -> list[FixedPointReport]:
    """Locate roots of X(x) - x by sign-change scan plus bisection.

    Scans a uniform 2000-point grid, bisects every bracketed sign change down
    to `tol`, and reports each root with its multiplier J(x_c). Roots closer
    than 10*tol are merged. Raises DegenerateMapError when X(x) - x vanishes
    on the whole scan (the identity map).
    """
    xs = np.linspace(m.domain[0], m.domain[1], _BRACKET_POINTS)
    g = np.asarray(m.forward(xs), dtype=float) - xs
    if np.max(np.abs(g)) < 1e-14:
        raise DegenerateMapError(f"map '{m.name}': X(x) - x vanishes on the scan grid")

    roots: list[float] = []
    for i in range(len(xs) - 1):
        if g[i] == 0.0:
            roots.append(float(xs[i]))
            continue
        if g[i] * g[i + 1] < 0.0:
            a, b = float(xs[i]), float(xs[i + 1])
            ga = g[i]
            while b - a > tol:
                c = 0.5 * (a + b)
                gc = float(m.forward(c)) - c
                if ga * gc <= 0.0:
                    b = c
                else:
                    a, ga = c, gc
            roots.append(0.5 * (a + b))
    if g[-1] == 0.0:
        roots.append(float(xs[-1]))

    reports: list[FixedPointReport] = []
    for r in roots:
        if any(abs(r - p.location) < 10 * tol for p in reports):
            continue
        lam = eval_jacobian(m, r)
        if abs(lam) < 1.0 - 1e-12:
            cls = "attracting"
        elif abs(lam) > 1.0 + 1e-12:
            cls = "repelling"
        else:
            cls = "marginal"
        reports.append(FixedPointReport(location=r, multiplier=lam, classification=cls))
    return reports


def classical_orbit(m: MapSpec, x0: float, T: int) -> np.ndarray:
    """Return [x0, X(x0), ..., X^T(x0)]; raises OrbitEscapedError on exit."""
    _require_in_domain(m, x0)
    orbit = np.empty(T + 1)
    orbit[0] = x0
    x = x0
    for t in range(1, T + 1):
        x = float(m.forward(x))
        if not (m.contains(x) and np.isfinite(x)):
            raise OrbitEscapedError(
                f"orbit left domain {m.domain} at step {t} (x={x!r})", step=t
            )
        orbit[t] = x
    return orbit


# ---------------------------------------------------------------------------
# density transport and the symplectic lift

def push_forward_density(m: MapSpec, density: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Transport a cell-sampled density through the map.

    Returns Fbar(x) = F(Xinv(x)) / |J(Xinv(x))| at each cell center, with
    zeros on cells outside the image of the domain. F is interpolated
    linearly between the given centers.
    """
    density = np.asarray(density, dtype=float)
    centers = np.asarray(centers, dtype=float)
    if density.shape != centers.shape:
        raise ValueError("density and centers must have the same shape")
    if np.any(density < 0):
        raise ValueError("density must be nonnegative")
    steps = np.diff(centers)
    if len(steps) and not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValueError("centers must be uniformly spaced")
    monotone_sign(m)

    lo, hi = image_interval(m)
    out = np.zeros_like(density)
    inside = (centers > lo) & (centers < hi)
    if not np.any(inside):
        return out
    xin = _invert_batch(m, centers[inside], tol=1e-12)
    jac = np.abs(np.asarray(m.jacobian(xin), dtype=float))
    out[inside] = np.interp(xin, centers, density) / jac
    return out


def extend_map(m: MapSpec) -> ExtendedMap:
    """Lift the map to (x, p) phase space; requires a nonvanishing Jacobian."""
    xs = np.linspace(m.domain[0], m.domain[1], _SCAN_POINTS)
    js = np.asarray(m.jacobian(xs), dtype=float)
    if np.any(np.abs(js) < 1e-14):
        raise SingularJacobianError(
            f"map '{m.name}': Jacobian vanishes somewhere on the domain"
        )
    return ExtendedMap(base=m)


# ---------------------------------------------------------------------------
# constructors

def identity_map(domain: tuple[float, float] = (-1.0, 1.0)) -> MapSpec:
    return MapSpec(
        name="identity",
        forward=lambda x: np.asarray(x) + 0.0,
        jacobian=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        domain=domain,
        inverse=lambda y: np.asarray(y) + 0.0,
    )


def linear_map(slope: float, intercept: float = 0.0,
               domain: tuple[float, float] = (-1.0, 1.0), name: str | None = None) -> MapSpec:
    if slope == 0.0:
        raise SingularJacobianError("linear map needs a nonzero slope")
    return MapSpec(
        name=name or f"linear({slope:g},{intercept:g})",
        forward=lambda x: slope * np.asarray(x, dtype=float) + intercept,
        jacobian=lambda x: np.full_like(np.asarray(x, dtype=float), slope),
        domain=domain,
        inverse=lambda y: (np.asarray(y, dtype=float) - intercept) / slope,
    )


def quadratic_map(A: float, B: float, C: float,
                  domain: tuple[float, float] = (-1.0, 1.0), name: str | None = None) -> MapSpec:
    """X(x) = A x^2 + B x + C with the exact Jacobian 2 A x + B.

    When the map is monotone on the domain, the matching branch of the
    quadratic formula is attached as the closed-form inverse.
    """
    if A == 0.0:
        return linear_map(B, C, domain, name=name or "quadratic")

    def fwd(x):
        x = np.asarray(x, dtype=float)
        return A * x * x + B * x + C

    def jac(x):
        x = np.asarray(x, dtype=float)
        return 2.0 * A * x + B

    lo, hi = domain
    inverse = None
    vertex = -B / (2.0 * A)
    if not (lo < vertex < hi):  # monotone branch, invertible in closed form
        def inverse(y):
            y = np.asarray(y, dtype=float)
            disc = np.sqrt(np.maximum(B * B - 4.0 * A * (C - y), 0.0))
            r1 = (-B + disc) / (2.0 * A)
            r2 = (-B - disc) / (2.0 * A)
            mid = 0.5 * (lo + hi)
            return np.where(np.abs(r1 - mid) <= np.abs(r2 - mid), r1, r2)

    return MapSpec(name=name or "quadratic", forward=fwd, jacobian=jac,
                   domain=domain, inverse=inverse)


def polynomial_map(coeffs: Sequence[float],
                   domain: tuple[float, float] = (-1.0, 1.0), name: str | None = None) -> MapSpec:
    """Map with X(x) = sum_k coeffs[k] x^k (ascending order, any degree)."""
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 1 or len(c) == 0:
        raise ValueError("coeffs must be a non-empty 1-D sequence")
    dc = c[1:] * np.arange(1, len(c))

    def fwd(x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), c)

    def jac(x):
        x = np.asarray(x, dtype=float)
        if len(dc) == 0:
            return np.zeros_like(x)
        return np.polynomial.polynomial.polyval(x, dc)

    inverse = None
    if len(c) <= 2:  # affine, invert exactly
        slope = c[1] if len(c) == 2 else 0.0
        if slope != 0.0:
            inverse = lambda y: (np.asarray(y, dtype=float) - c[0]) / slope
    return MapSpec(name=name or f"poly(deg={len(c) - 1})", forward=fwd,
                   jacobian=jac, domain=domain, inverse=inverse)


def gradient_descent_map(eta: float, grad_f: Rule, grad2_f: Rule,
                         domain: tuple[float, float] = (-1.0, 1.0),
                         name: str = "gradient_descent") -> MapSpec:
    """Descent step X(x) = x - eta * grad_f(x) with J(x) = 1 - eta * grad2_f(x)."""

    def fwd(x):
        x = np.asarray(x, dtype=float)
        return x - eta * np.asarray(grad_f(x), dtype=float)

    def jac(x):
        x = np.asarray(x, dtype=float)
        return 1.0 - eta * np.asarray(grad2_f(x), dtype=float)

    return MapSpec(name=name, forward=fwd, jacobian=jac, domain=domain)
