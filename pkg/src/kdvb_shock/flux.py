"""Flux models, shock setup and the shared grid calculus.

Everything downstream works in the moving coordinate xi = x - s t.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial

from . import kernels


class DegenerateStatesError(ValueError):
    pass


class StencilWidthError(ValueError):
    pass


@dataclass(frozen=True)
class FluxModel:
    """Strictly convex flux f with derivatives up to third order."""

    poly: Polynomial
    descriptor: str
    _derivs: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p1 = self.poly.deriv(1)
        p2 = self.poly.deriv(2)
        p3 = self.poly.deriv(3)
        object.__setattr__(self, "_derivs", (p1, p2, p3))

    def eval(self, u):
        return self.poly(u)

    def d1(self, u):
        return self._derivs[0](u)

    def d2(self, u):
        return self._derivs[1](u)

    def d3(self, u):
        return self._derivs[2](u)

    @property
    def degree(self):
        return self.poly.degree()

    def to_dict(self):
        return {"kind": "polynomial", "coeffs": [float(c) for c in self.poly.coef],
                "descriptor": self.descriptor}


def burgers():
    return FluxModel(Polynomial([0.0, 0.0, 0.5]), "burgers u^2/2")


def quadratic_linear(c):
    return FluxModel(Polynomial([0.0, float(c), 0.5]), f"u^2/2 + {c:g} u")


def polynomial(coeffs, descriptor=None):
    """User flux sum_k coeffs[k] u^k."""
    coeffs = [float(c) for c in coeffs]
    if descriptor is None:
        descriptor = "poly" + str(coeffs)
    return FluxModel(Polynomial(coeffs), descriptor)


def flux_from_dict(d):
    kind = d.get("kind", "burgers")
    if kind == "burgers":
        return burgers()
    if kind == "quadratic_linear":
        return quadratic_linear(d["c"])
    if kind == "polynomial":
        return polynomial(d["coeffs"], d.get("descriptor"))
    raise ValueError(f"unknown flux kind {kind!r}")


def check_convexity(flux, lo, hi, samples=1001):
    """Minimum of f'' on [lo, hi] and whether it is positive."""
    u = np.linspace(lo, hi, samples)
    fmin = float(np.min(flux.d2(u)))
    return fmin, fmin > 0.0


def check_flux_derivatives(flux, lo, hi, samples=101, rel_tol=1e-6):
    """Compare d1..d3 against central differences of the lower derivative.

    Relative error with absolute floor 1e-12.  Returns the worst error.
    """
    u = np.linspace(lo, hi, samples)
    step = 1e-4 * max(1.0, hi - lo)
    worst = 0.0
    lower = [flux.eval, flux.d1, flux.d2]
    upper = [flux.d1, flux.d2, flux.d3]
    for f0, f1 in zip(lower, upper):
        # 4th-order central difference
        fd = (-f0(u + 2 * step) + 8 * f0(u + step) - 8 * f0(u - step) + f0(u - 2 * step)) / (12 * step)
        exact = f1(u)
        err = np.abs(fd - exact) / np.maximum(np.abs(exact), 1e-12)
        worst = max(worst, float(np.max(np.where(np.abs(fd - exact) < 1e-12, 0.0, err))))
    return worst, worst <= rel_tol


def rankine_hugoniot_speed(flux, u_left, u_right):
    if u_left == u_right:
        raise DegenerateStatesError("shock speed undefined for equal states")
    return float((flux.eval(u_left) - flux.eval(u_right)) / (u_left - u_right))


@dataclass(frozen=True)
class ShockSetup:
    u_left: float
    u_right: float
    mu: float
    gamma: float
    flux: FluxModel
    oracle: bool = False
    speed: float = field(init=False)

    def __post_init__(self):
        if not self.u_left > self.u_right:
            raise ValueError("need u_left > u_right")
        if self.gamma <= 0:
            raise ValueError("viscosity must be positive")
        if self.mu < 0 or (self.mu == 0 and not self.oracle):
            raise ValueError("dispersion must be positive (mu = 0 only with oracle=True)")
        gmin, convex = check_convexity(self.flux, self.u_right, self.u_left)
        if not convex:
            raise ValueError(f"flux not strictly convex on the state hull (min f'' = {gmin:g})")
        s = rankine_hugoniot_speed(self.flux, self.u_left, self.u_right)
        object.__setattr__(self, "speed", s)
        if not self.flux.d1(self.u_left) > s > self.flux.d1(self.u_right):
            raise ValueError("Lax condition violated")

    @property
    def jump(self):
        return self.u_left - self.u_right

    def reduced_flux(self, u):
        """f(u) - f(u_l) - s (u - u_l); vanishes at both far-field states."""
        return self.flux.eval(u) - self.flux.eval(self.u_left) - self.speed * (u - self.u_left)

    def to_dict(self):
        return {"u_left": self.u_left, "u_right": self.u_right, "mu": self.mu,
                "gamma": self.gamma, "speed": self.speed, "flux": self.flux.to_dict()}


@dataclass(frozen=True)
class ExistenceReport:
    discriminant: float
    passed: bool


def check_profile_existence(setup):
    """gamma^2 + 4 mu (s - f'(u_l)) >= 0 is needed for a monotone profile."""
    disc = setup.gamma ** 2 + 4.0 * setup.mu * (setup.speed - float(setup.flux.d1(setup.u_left)))
    return ExistenceReport(float(disc), bool(disc >= 0.0))


@dataclass(frozen=True)
class LineGrid:
    """Uniform grid on [-L, L] with N intervals (N + 1 nodes, both ends included)."""

    L: float
    N: int

    def __post_init__(self):
        if self.N < 16:
            raise ValueError("LineGrid needs N >= 16")
        if self.L <= 0:
            raise ValueError("LineGrid needs L > 0")

    @property
    def h(self):
        return 2.0 * self.L / self.N

    @property
    def nodes(self):
        return np.linspace(-self.L, self.L, self.N + 1)

    @property
    def size(self):
        return self.N + 1

    def index_of(self, xi):
        return int(round((xi + self.L) / self.h))


def fornberg_weights(z, x, m):
    """Finite-difference weights for derivatives 0..m at z from nodes x."""
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


@lru_cache(maxsize=None)
def central_stencil(order, accuracy):
    """Centered weights (unit spacing) for d^order/dx^order, O(h^accuracy)."""
    half = (order + 1) // 2 + accuracy // 2 - 1
    offsets = np.arange(-half, half + 1, dtype=float)
    return fornberg_weights(0.0, offsets, order)


@lru_cache(maxsize=None)
def _boundary_stencils(order, accuracy):
    half = len(central_stencil(order, accuracy)) // 2
    width = order + accuracy
    rows = []
    for i in range(half):
        offsets = np.arange(width, dtype=float) - i
        rows.append(fornberg_weights(0.0, offsets, order))
    return width, rows


def fd_derivative(values, h, order, accuracy=4):
    """Derivative of gridded samples: centered interior, one-sided near the ends."""
    if order not in (1, 2, 3) or accuracy not in (2, 4):
        raise ValueError("order must be 1..3 and accuracy 2 or 4")
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    interior = central_stencil(order, accuracy)
    half = len(interior) // 2
    width, rows = _boundary_stencils(order, accuracy)
    if n < max(width + 1, 2 * half + 1):
        raise StencilWidthError(f"need at least {max(width + 1, 2 * half + 1)} nodes, got {n}")
    out = np.empty(n)
    out[half:n - half] = np.correlate(values, interior, mode="valid")
    sign = (-1.0) ** order
    for i, w in enumerate(rows):
        out[i] = w @ values[:width]
        # mirror: reversed nodes flip the sign of odd derivatives
        out[n - 1 - i] = sign * (w @ values[::-1][:width])
    return out / h ** order


def zero_ghost_derivative(values, h, order, backend=None):
    """4th-order centered derivative treating values outside the array as zero."""
    coeffs = central_stencil(order, 4)
    return kernels.stencil_apply(values, coeffs, backend=backend) / h ** order


def quadrature(values, h, periodic=False, rule="trapezoid"):
    """Composite trapezoid (or Simpson) on a uniform grid.

    ``periodic=True`` treats values as one cell without the repeated endpoint,
    which is spectrally accurate for resolved trigonometric data.
    """
    values = np.asarray(values, dtype=float)
    if periodic:
        return float(h * np.add.reduce(values))
    if rule == "simpson":
        n = values.shape[0]
        if n % 2 == 1 and n >= 3:
            w = np.ones(n)
            w[1:-1:2] = 4.0
            w[2:-1:2] = 2.0
            return float(h / 3.0 * np.add.reduce(w * values))
    w = np.ones(values.shape[0])
    w[0] = w[-1] = 0.5
    return float(h * np.add.reduce(w * values))


def cumulative_quadrature(values, h, backend=None):
    """Running trapezoid integral from the left end, starting at 0."""
    return kernels.cumulative_trapezoid(values, h, backend=backend)


def cumulative_quadrature4(values, h, backend=None):
    """Running integral from the left end with the Euler-Maclaurin end correction (O(h^4))."""
    values = np.asarray(values, dtype=float)
    run = kernels.cumulative_trapezoid(values, h, backend=backend)
    dv = fd_derivative(values, h, 1, 4)
    return run - h * h / 12.0 * (dv - dv[0])
