"""The shift eta(t) of the profile inside the ansatz.

eta is chosen so that int (u - U) dxi stays zero, which gives the ODE

    eta' = [gamma I_2 + mu I_3 + J_1] / I_1 - s,
    I_m = int (u_l - u_r)(xi) g^(m)(xi - eta) dxi,
    J_1 = int (f(u_l) - f(u_r))(xi) g'(xi - eta) dxi.

Substituting y = xi - eta, each integral becomes a trapezoid sum against
g^(m)(y) on a fixed y-grid, and for a Fourier series u the sum collapses to
a0 S_m + 2 Re sum_k a_k exp(i k kappa eta) W_{m,k} with precomputed W.
"""
import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .fitting import InsufficientDecayError, fit_decay, upper_envelope
from .flux import quadrature
from .periodic import PeriodicField


class DenominatorError(RuntimeError):
    pass


class NoSignChangeError(ValueError):
    pass


class ShiftWeights:
    """Transforms W_{m,k} = sum_y w_y g^(m)(y) exp(i k kappa y) for m = 1, 2, 3."""

    def __init__(self, profile, kappa, K, L_q=None, h=0.02):
        if L_q is None:
            # truncation e^{-sigma0 L_q} well below 1e-12 in the shifted variable, so
            # the unperturbed cancellation holds to rounding
            L_q = 40.0 / profile.sigma0 + 1.0
        n = 2 * int(math.ceil(L_q / h))
        y = np.linspace(-L_q, L_q, n + 1)
        w = np.full(n + 1, 2.0 * L_q / n)
        w[0] *= 0.5
        w[-1] *= 0.5
        _, g1, g2, g3 = profile.g_derivatives(y)
        phase = np.exp(1j * kappa * np.outer(y, np.arange(K)))
        self.L_q = L_q
        self.kappa = kappa
        # the constant mode integrates exactly: int g^(m) = [g^(m-1)] at the ends
        ends = profile.g_derivatives(np.array([-L_q, L_q]))
        self.S = np.array([ends[m][1] - ends[m][0] for m in range(3)])
        self.W = np.stack([(w * gm) @ phase for gm in (g1, g2, g3)])

    def integrals(self, a, eta):
        """int u(y + eta) g^(m)(y) dy for m = 1, 2, 3, u given by coefficients a."""
        k = np.arange(1, len(a))
        rot = a[1:] * np.exp(1j * k * self.kappa * eta)
        return a[0].real * self.S + 2.0 * (self.W[:, 1:] @ rot).real


class ShiftSystem:
    """Right-hand side of the shift ODE for given far-field histories."""

    def __init__(self, profile, hist_l, hist_r, L_q=None, pad=4):
        self.profile = profile
        self.setup = profile.setup
        self.hist_l, self.hist_r = hist_l, hist_r
        self.pad = pad
        self.wl = ShiftWeights(profile, 2 * math.pi / hist_l.period, hist_l.solver.K, L_q)
        self.wr = ShiftWeights(profile, 2 * math.pi / hist_r.period, hist_r.solver.K, L_q)
        self.L_q = self.wl.L_q

    def rhs_from_coeffs(self, a_l, a_r, eta, period_l, period_r):
        st = self.setup
        fl = PeriodicField(period_l, a_l).flux_coeffs(st.flux, self.pad)
        fr = PeriodicField(period_r, a_r).flux_coeffs(st.flux, self.pad)
        Il = self.wl.integrals(a_l, eta)
        Ir = self.wr.integrals(a_r, eta)
        Jl = self.wl.integrals(fl, eta)[0]
        Jr = self.wr.integrals(fr, eta)[0]
        den = Il[0] - Ir[0]
        if abs(den) < 0.5 * st.jump:
            raise DenominatorError(f"|int (u_l - u_r) g'| = {abs(den):.3g} below half the jump; "
                                   "perturbation too large")
        num = st.gamma * (Il[1] - Ir[1]) + st.mu * (Il[2] - Ir[2]) + (Jl - Jr)
        return num / den - st.speed, den

    def __call__(self, t, eta):
        return self.rhs_from_coeffs(self.hist_l.coeffs_at(t), self.hist_r.coeffs_at(t), eta,
                                    self.hist_l.period, self.hist_r.period)[0]


def shift_rhs(t, eta, hist_l, hist_r, profile, L_q=None):
    """One evaluation of eta'(t); builds the quadrature weights (use ShiftSystem for loops)."""
    return ShiftSystem(profile, hist_l, hist_r, L_q)(t, eta)


def _far_field(field_or_fn, xi):
    if isinstance(field_or_fn, PeriodicField):
        return field_or_fn.evaluate(xi)
    return np.asarray(field_or_fn(xi), dtype=float)


def shift_functional(u0, grid, ul_vals, ur_vals, profile, eta):
    """F(eta) = int (u0 - u_l0) g(xi - eta) + (u0 - u_r0)(1 - g(xi - eta)) and F'(eta)."""
    g, g1, _, _ = profile.g_derivatives(grid.nodes - eta)
    F = quadrature((u0 - ul_vals) * g + (u0 - ur_vals) * (1.0 - g), grid.h)
    dF = quadrature((ul_vals - ur_vals) * g1, grid.h)
    return F, dF


def solve_initial_shift(u0, grid, u_l0, u_r0, profile, tol=1e-10):
    """Root eta0 of F; F is decreasing with slope close to -(u_l - u_r)."""
    xi = grid.nodes
    ul = _far_field(u_l0, xi)
    ur = _far_field(u_r0, xi)
    jump = profile.jump
    F = lambda e: shift_functional(u0, grid, ul, ur, profile, e)[0]
    F0 = F(0.0)
    guess = F0 / jump
    lo, hi = guess - 0.5, guess + 0.5
    Flo, Fhi = F(lo), F(hi)
    width = 0.5
    while Flo * Fhi > 0.0 and width < grid.L / 4:
        width *= 2.0
        lo, hi = guess - width, guess + width
        Flo, Fhi = F(lo), F(hi)
    if Flo * Fhi > 0.0:
        raise NoSignChangeError(f"F({lo:g}) = {Flo:.3g}, F({hi:g}) = {Fhi:.3g}: u0 does not match "
                                "the far fields")
    eta = brentq(F, lo, hi, xtol=1e-14, rtol=1e-15)
    if abs(eta) > grid.L / 4:
        raise NoSignChangeError(f"root eta0 = {eta:g} lies outside |eta| <= L/4: u0 does not "
                                "match the far fields")
    for _ in range(2):
        val, slope = shift_functional(u0, grid, ul, ur, profile, eta)
        if slope != 0.0:
            eta -= val / slope
    resid = abs(shift_functional(u0, grid, ul, ur, profile, eta)[0])
    if resid > tol * jump:
        raise NoSignChangeError(f"|F(eta0)| = {resid:.3g} above tolerance")
    return float(eta)


def eta_infinity_formula(u0, grid, w0l, w0r, profile, defect_l, defect_r):
    """Limit shift from initial mass defects and the periodic flux-defect integrals.

    eta_inf = [int_{-inf}^0 (u0 - phi - w0l) + int_0^inf (u0 - phi - w0r)
               + I_t^l - I_s^l - I_t^r + I_s^r] / (u_l - u_r)

    ``w0l`` and ``w0r`` are the zero-mean initial perturbations (PeriodicField or callable).
    Returns (eta_inf, eta_inf_1, eta_inf_2, end_gap).
    """
    xi = grid.nodes
    if grid.N % 2:
        raise ValueError("grid must have a node at xi = 0 (even N)")
    mid = grid.N // 2
    phi = profile.evaluate(xi)[0]
    left = u0[: mid + 1] - phi[: mid + 1] - _far_field(w0l, xi[: mid + 1])
    right = u0[mid:] - phi[mid:] - _far_field(w0r, xi[mid:])
    part1 = quadrature(left, grid.h, rule="simpson") + quadrature(right, grid.h, rule="simpson")
    part2 = defect_l.I_t - defect_l.I_s - defect_r.I_t + defect_r.I_s
    gap = max(abs(left[0]), abs(right[-1]))
    return (part1 + part2) / profile.jump, part1, part2, float(gap)


@dataclass
class ShiftTrajectory:
    times: np.ndarray
    eta: np.ndarray
    deta: np.ndarray
    eta0: float
    eta_inf_ode: float = float("nan")
    eta_inf_formula: float = float("nan")
    tail_rate: float = float("nan")
    tail_bound: float = float("nan")
    fit_C: float = float("nan")
    fit_theta: float = float("nan")
    delta: float = float("nan")
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self._spline = CubicHermiteSpline(self.times, self.eta, self.deta)

    def __call__(self, t):
        return self._spline(t)

    def derivative(self, t):
        return self._spline(t, 1)

    def to_csv(self, path):
        ref = self.eta_inf_formula if np.isfinite(self.eta_inf_formula) else self.eta_inf_ode
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "eta", "deta", "abs_eta_minus_eta_inf"])
            for t, e, d in zip(self.times, self.eta, self.deta):
                w.writerow([f"{v:.17g}" for v in (t, e, d, abs(e - ref))])

    def summary(self):
        return {"eta0": self.eta0, "eta_inf_ode": self.eta_inf_ode,
                "eta_inf_formula": self.eta_inf_formula, "tail_rate": self.tail_rate,
                "tail_bound": self.tail_bound, "fit_C": self.fit_C, "fit_theta": self.fit_theta,
                "delta": self.delta, "notes": list(self.notes)}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def integrate_shift(eta0, hist_l, hist_r, profile, T=None, dt=None, L_q=None, delta=None):
    """Classical RK4 for eta on the snapshot spacing of the periodic histories."""
    system = ShiftSystem(profile, hist_l, hist_r, L_q)
    if dt is None:
        dt = float(hist_l.times[1] - hist_l.times[0])
    if T is None:
        T = float(min(hist_l.times[-1], hist_r.times[-1]))
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be a multiple of dt")
    times = np.arange(n + 1) * dt
    eta = np.empty(n + 1)
    deta = np.empty(n + 1)
    eta[0] = eta0
    e = float(eta0)
    k1 = system(0.0, e)
    deta[0] = k1
    for i in range(n):
        t = times[i]
        k2 = system(t + dt / 2, e + dt / 2 * k1)
        k3 = system(t + dt / 2, e + dt / 2 * k2)
        k4 = system(t + dt, e + dt * k3)
        e = e + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        eta[i + 1] = e
        k1 = system(times[i + 1], e)
        deta[i + 1] = k1
    traj = ShiftTrajectory(times, eta, deta, float(eta0))
    traj.delta = float("nan") if delta is None else float(delta)
    _fit_limit(traj)
    return traj


def _fit_limit(traj):
    """eta_inf_ode from eta = eta_inf + A e^{-r t}, r from the envelope of |eta'|."""
    t, eta, deta = traj.times, traj.eta, traj.deta
    scale = abs(traj.eta0) + 1.0
    floor = 1e-15 * scale + 1e-11 * float(np.max(np.abs(deta)))
    half = t >= t[0] + 0.5 * (t[-1] - t[0])
    if np.max(np.abs(deta)) <= 1e-14 * scale:
        traj.eta_inf_ode = float(eta[-1])
        traj.tail_bound = 0.0
        traj.notes.append("eta is constant; no decay to fit")
        return
    try:
        env = fit_decay(t, deta, floor=floor, min_efolds=1.0, max_residual=1.0)
    except InsufficientDecayError as exc:
        traj.eta_inf_ode = float(eta[-1])
        traj.notes.append(f"eta' decay fit failed: {exc}")
        return
    r = env.rate
    traj.tail_rate = r
    # A by linear least squares on eta(t) - eta(T) = A (e^{-rt} - e^{-rT})
    basis = np.exp(-r * t[half]) - math.exp(-r * t[-1])
    target = eta[half] - eta[-1]
    denom = float(basis @ basis)
    A = float(basis @ target) / denom if denom > 0 else 0.0
    traj.eta_inf_ode = float(eta[-1] - A * math.exp(-r * t[-1]))
    traj.tail_bound = float(env.amplitude * math.exp(-r * t[-1]) / r)


def fit_shift_decay(traj, eta_inf=None):
    """Fit |eta'| + |eta - eta_inf| <= C delta e^{-theta t}; returns (C, theta)."""
    ref = traj.eta_inf_ode if eta_inf is None else eta_inf
    q = np.abs(traj.deta) + np.abs(traj.eta - ref)
    floor = 1e-15 * (abs(ref) + 1.0) + 1e-11 * float(np.max(q))
    fit = fit_decay(traj.times, q, floor=floor, window="all", min_efolds=1.0, max_residual=1.0)
    # smallest C with the bound holding at every sample above the floor
    env = upper_envelope(q)
    keep = env > floor
    bound = np.max(env[keep] * np.exp(fit.rate * traj.times[keep]))
    delta = traj.delta if np.isfinite(traj.delta) and traj.delta > 0 else 1.0
    traj.fit_C = float(bound / delta)
    traj.fit_theta = float(fit.rate)
    return traj.fit_C, traj.fit_theta
