"""Full-line perturbation around the shifted ansatz.

The ansatz U = u_l g(xi - eta) + u_r (1 - g(xi - eta)) carries the periodic
far fields; it solves the equation up to an error h,

    U_t - s U_xi + f(U)_xi + mu U_xixixi - gamma U_xixi = h,
    h = B_xi + R,
    B = f(U) - f(u_l) g - f(u_r)(1 - g) + 3 mu (du)_xi g' - 2 gamma du g',
    R = (f(u_l) - f(u_r)) g' + gamma du g'' + mu du g''' - du g' (s + eta'),

with du = u_l - u_r and g evaluated at xi - eta.  The perturbation v = u - U
is exponentially localized, so it is evolved on a truncated line with zero
ghost values by an IMEX Runge-Kutta method (ARS(4,4,3)): the linear part
s d + gamma d^2 - mu d^3 implicitly, the flux difference and h explicitly.
"""
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fitting import InsufficientDecayError, fit_decay, upper_envelope
from .flux import central_stencil, cumulative_quadrature4, fd_derivative, quadrature


class BoundaryContaminationError(RuntimeError):
    pass


class AnsatzRangeError(ValueError):
    pass


@dataclass(frozen=True)
class AnsatzFrame:
    t: float
    eta: float
    deta: float
    U: np.ndarray
    U_xi: np.ndarray
    fU: np.ndarray
    dfU: tuple  # f', f'', f''' at U
    h: np.ndarray
    H: np.ndarray
    B: np.ndarray
    total_h: float  # quadrature of h over the grid


def _far_field_derivs(field, xi):
    return [field.evaluate(xi, d) for d in range(3)]


def build_ansatz(profile, eta, deta, u_l, u_r, grid, t=0.0):
    """Ansatz, error term h and its anti-derivative H = -int_{-inf}^xi h."""
    if abs(eta) > grid.L / 4:
        raise AnsatzRangeError(f"|eta| = {abs(eta):g} exceeds L/4 = {grid.L / 4:g}")
    st = profile.setup
    flux = st.flux
    xi = grid.nodes
    g, g1, g2, g3 = profile.g_derivatives(xi - eta)
    ul, ul1, ul2 = _far_field_derivs(u_l, xi)
    ur, ur1, ur2 = _far_field_derivs(u_r, xi)
    du, du1, du2 = ul - ur, ul1 - ur1, ul2 - ur2
    U = ur + du * g
    U_xi = ur1 + du1 * g + du * g1
    fU = flux.eval(U)
    f1U = flux.d1(U)
    fl, fr = flux.eval(ul), flux.eval(ur)
    B = fU - fl * g - fr * (1.0 - g) + 3 * st.mu * du1 * g1 - 2 * st.gamma * du * g1
    B_xi = (f1U * U_xi - flux.d1(ul) * ul1 * g - fl * g1 - flux.d1(ur) * ur1 * (1.0 - g) + fr * g1
            + 3 * st.mu * (du2 * g1 + du1 * g2) - 2 * st.gamma * (du1 * g1 + du * g2))
    R = (fl - fr) * g1 + st.gamma * du * g2 + st.mu * du * g3 - du * g1 * (st.speed + deta)
    h = B_xi + R
    # H = -int_{-inf}^xi h; right of eta use int_xi^inf h (int h = 0 by the choice of eta')
    # so neither tail is a difference of O(1) numbers
    left = cumulative_quadrature4(h, grid.h)
    right = cumulative_quadrature4(h[::-1], grid.h)[::-1]
    H = np.where(xi <= eta, -left, right)
    return AnsatzFrame(t=float(t), eta=float(eta), deta=float(deta), U=U, U_xi=U_xi, fU=fU,
                       dfU=(f1U, flux.d2(U), flux.d3(U)), h=h, H=H, B=B,
                       total_h=quadrature(h, grid.h))


class AnsatzSupplier:
    """Pull-based frames at arbitrary times from the far-field histories and eta(t).

    eta' is recomputed from the shift ODE at the interpolated eta, so the
    zero-integral condition on h holds to quadrature accuracy at every stage.
    """

    def __init__(self, profile, grid, hist_l, hist_r, trajectory, shift_system, cache=16):
        self.profile, self.grid = profile, grid
        self.hist_l, self.hist_r = hist_l, hist_r
        self.traj = trajectory
        self.system = shift_system
        self._cache = OrderedDict()
        self._size = cache

    def __call__(self, t):
        key = round(t, 12)
        fr = self._cache.get(key)
        if fr is not None:
            self._cache.move_to_end(key)
            return fr
        ul = self.hist_l.at(t)
        ur = self.hist_r.at(t)
        eta = float(self.traj(t))
        deta = self.system.rhs_from_coeffs(ul.coeffs, ur.coeffs, eta, ul.period, ur.period)[0]
        fr = build_ansatz(self.profile, eta, deta, ul, ur, self.grid, t)
        self._cache[key] = fr
        if len(self._cache) > self._size:
            self._cache.popitem(last=False)
        return fr


class StaticAnsatz:
    """Constant far fields and fixed eta: U = phi(xi - eta), h = 0 up to interpolation."""

    def __init__(self, profile, grid, eta=0.0):
        from .periodic import PeriodicField
        st = profile.setup
        const = lambda c: PeriodicField(2 * math.pi, np.array([c, 0, 0, 0, 0], dtype=complex))
        self.frame = build_ansatz(profile, eta, 0.0, const(st.u_left), const(st.u_right), grid)

    def __call__(self, t):
        return self.frame


# ARS(4,4,3): explicit rows, implicit rows (below-diagonal part), diagonal 1/2
_C = (0.0, 0.5, 2.0 / 3.0, 0.5, 1.0)
_AHAT = ((), (0.5,), (11 / 18, 1 / 18), (5 / 6, -5 / 6, 0.5), (0.25, 1.75, 0.75, -1.75))
_A = ((), (0.0,), (0.0, 1 / 6), (0.0, -0.5, 0.5), (0.0, 1.5, -1.5, 0.5))
_DIAG = 0.5


def linear_stencil(setup, h):
    """Width-7 centered stencil of s d + gamma d^2 - mu d^3 (4th order)."""
    c1 = np.zeros(7)
    c2 = np.zeros(7)
    c1[1:6] = central_stencil(1, 4) / h
    c2[1:6] = central_stencil(2, 4) / h ** 2
    c3 = central_stencil(3, 4) / h ** 3
    return setup.speed * c1 + setup.gamma * c2 - setup.mu * c3


def _banded_from_stencil(coeffs, n, scale, r=3):
    """LAPACK band layout of I - scale * T, T Toeplitz with the given centered stencil."""
    ab = np.zeros((2 * r + 1, n))
    for d in range(-r, r + 1):
        c = -scale * coeffs[d + r]
        if d >= 0:
            ab[r - d, d:] = c
        else:
            ab[r - d, :n + d] = c
    ab[r] += 1.0
    return ab


class ImexStepper:
    def __init__(self, setup, grid, dt, backend=None):
        self.setup, self.grid, self.dt = setup, grid, float(dt)
        self.backend = backend
        self.lin = linear_stencil(setup, grid.h)
        self.d1 = central_stencil(1, 4) / grid.h
        ab = _banded_from_stencil(self.lin, grid.size, _DIAG * dt)
        self.solver = kernels.BandedSolver(ab, 3, backend=backend)
        self.taylor = setup.flux.degree <= 3

    def flux_difference(self, v, frame):
        if self.taylor:
            f1, f2, f3 = frame.dfU
            return v * (f1 + v * (0.5 * f2 + v * (f3 / 6.0)))
        return self.setup.flux.eval(frame.U + v) - frame.fU

    def explicit(self, v, frame):
        df = self.flux_difference(v, frame)
        return -kernels.stencil_apply(df, self.d1, backend=self.backend) - frame.h

    def apply_linear(self, v):
        return kernels.stencil_apply(v, self.lin, backend=self.backend)

    def step(self, v, t, supplier):
        dt = self.dt
        N = [self.explicit(v, supplier(t))]
        K = [None]
        Y = v
        for i in range(1, 5):
            rhs = v.copy()
            for j, a in enumerate(_AHAT[i]):
                rhs += (dt * a) * N[j]
            for j, a in enumerate(_A[i]):
                if a:
                    rhs += (dt * a) * K[j]
            Y = self.solver.solve(rhs)
            K.append((Y - rhs) / (_DIAG * dt))
            if i < 4:
                N.append(self.explicit(Y, supplier(t + _C[i] * dt)))
        return Y


@dataclass
class PerturbationRun:
    grid: object
    times: np.ndarray
    v: np.ndarray  # (n_snap, N + 1)
    mass: np.ndarray
    margins: np.ndarray
    dt: float
    frames_eta: np.ndarray = field(default=None)

    def drift_rate(self):
        """max |d/dt int v| estimated from consecutive snapshots."""
        if len(self.times) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.mass)) / np.diff(self.times)))


def boundary_margin(v, frac=0.1):
    n = len(v)
    k = max(1, int(frac * n))
    return float(max(np.max(np.abs(v[:k])), np.max(np.abs(v[-k:]))))


def solve_perturbation(v0, supplier, grid, setup, T, dt, dt_out=None, backend=None,
                       margin_rel=1e-8, margin_abs=1e-13):
    """March v from v0 to T; snapshots every dt_out."""
    v = np.array(v0, dtype=float)
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a multiple of dt")
    dt_out = dt if dt_out is None else dt_out
    every = max(1, int(round(dt_out / dt)))
    stepper = ImexStepper(setup, grid, dt, backend)

    def check(v, t):
        m = boundary_margin(v)
        if m > max(margin_rel * float(np.max(np.abs(v))), margin_abs):
            raise BoundaryContaminationError(
                f"boundary margin {m:.3g} at t = {t:g} exceeds {margin_rel:g} of max|v|; "
                "enlarge L or shorten T")
        return m

    times = [0.0]
    snaps = [v.copy()]
    mass = [quadrature(v, grid.h)]
    margins = [check(v, 0.0)]
    etas = [supplier(0.0).eta]
    for i in range(n):
        t = i * dt
        v = stepper.step(v, t, supplier)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite perturbation at t = {t + dt:g}; reduce dt")
        if (i + 1) % every == 0 or i + 1 == n:
            tn = (i + 1) * dt
            times.append(tn)
            snaps.append(v.copy())
            mass.append(quadrature(v, grid.h))
            margins.append(check(v, tn))
            etas.append(supplier(tn).eta)
    return PerturbationRun(grid, np.array(times), np.array(snaps), np.array(mass),
                           np.array(margins), float(dt), np.array(etas))


def anti_derivative(v, h):
    """Psi(xi) = int_{-L}^xi v, trapezoid with the Euler-Maclaurin end correction (O(h^4))."""
    return cumulative_quadrature4(v, h)


def psi_derivatives(v, h):
    """Psi and its derivatives up to order 4, using d Psi = v exactly."""
    return [anti_derivative(v, h), v, fd_derivative(v, h, 1), fd_derivative(v, h, 2),
            fd_derivative(v, h, 3)]


def weighted_functionals(derivs, h, xi, alpha, beta, xi_center, t, L=None):
    """W_k = e^{beta t} int e^{alpha |xi - xi_c|} (d^k Psi)^2 for k = 0..3, and the
    spatial integrands of the dissipation terms (order k + 1) at the same time."""
    if L is not None and alpha * (L - abs(xi_center)) > 60.0:
        raise OverflowError("weight exponent alpha (L - |xi*|) exceeds 60")
    w = np.exp(alpha * np.abs(xi - xi_center))
    scale = math.exp(beta * t)
    W = [scale * quadrature(w * d * d, h) for d in derivs[:4]]
    D = [scale * quadrature(w * d * d, h) for d in derivs[1:5]]
    return np.array(W), np.array(D)


def _above_noise(a, noise_rel, noise_abs):
    top = float(np.max(a))
    if top <= noise_abs:
        return None
    return a > max(noise_rel * top, noise_abs)


def verify_H_bound(frames, delta, theta, sigma0, grid, noise_rel=1e-7, noise_abs=1e-12):
    """R_j(t) = max |d^j H| e^{theta t} e^{sigma0 |xi - eta|} for j = 0..3.

    Values below noise_rel times the frame maximum, or below noise_abs, are
    excluded: there the exponential weights only amplify rounding error.
    Returns (R array of shape (n_frames, 4), fitted C per j).
    """
    xi = grid.nodes
    R = np.zeros((len(frames), 4))
    for i, fr in enumerate(frames):
        ders = [fr.H, -fr.h, -fd_derivative(fr.h, grid.h, 1), -fd_derivative(fr.h, grid.h, 2)]
        weight = np.exp(sigma0 * np.abs(xi - fr.eta)) * math.exp(theta * fr.t)
        for j, d in enumerate(ders):
            a = np.abs(d)
            keep = _above_noise(a, noise_rel, noise_abs)
            if keep is None:
                continue
            R[i, j] = float(np.max(a[keep] * weight[keep]))
    d = delta if delta > 0 else 1.0
    return R, R.max(axis=0) / d


def ansatz_gap_audit(frames, profile, eta_inf, theta, grid, noise_rel=1e-7, noise_abs=1e-12):
    """max |d^i (U - phi(. - eta_inf))| e^{theta t} for i = 0, 1 per frame."""
    xi = grid.nodes
    phi, dphi, _, _ = profile.evaluate(xi - eta_inf)
    out = np.zeros((len(frames), 2))
    for k, fr in enumerate(frames):
        for i, d in enumerate((fr.U - phi, fr.U_xi - dphi)):
            a = np.abs(d)
            keep = _above_noise(a, noise_rel, noise_abs)
            if keep is None:
                continue
            out[k, i] = float(np.max(a[keep])) * math.exp(theta * fr.t)
    return out


@dataclass
class StabilityReport:
    times: np.ndarray
    supnorm: np.ndarray
    weighted: np.ndarray  # (n, 4)
    dissipation: np.ndarray  # (n, 4) running time integrals
    weighted_plain: np.ndarray  # alpha = beta = 0
    beta_meas: float
    beta_fit_window: tuple
    drift_rate: float
    psi_end: np.ndarray
    H_R: np.ndarray
    H_C: np.ndarray
    ansatz_gap: np.ndarray
    weighted_ratio: np.ndarray
    weighted_ratio_plain: np.ndarray
    notes: list = field(default_factory=list)

    def weighted_bounded(self, factor=3.0):
        return bool(np.all(self.weighted_ratio <= factor)), bool(np.all(self.weighted_ratio_plain <= factor))


def _early_ratio(series, times, floor=0.0):
    """max over the run / max over the first quarter, per column.

    Values below ``floor`` (per column) are rounding noise and count as the floor.
    """
    q = times <= times[0] + 0.25 * (times[-1] - times[0])
    floor = np.broadcast_to(np.asarray(floor, dtype=float), series.shape[1:])
    early = np.maximum(series[q].max(axis=0), floor)
    late = np.maximum(series.max(axis=0), floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(early > 0, late / early, np.where(late > 0, np.inf, 1.0))
    return r


def weighted_noise_floor(grid, jump, alpha, beta, xi_center, T):
    """Rounding level of W_0..W_3: d^k Psi noise 1e-14 jump h^(1-k) (L for k = 0), weighted."""
    h, L = grid.h, grid.L
    noise = 1e-14 * jump * np.array([L, 1.0, 1.0 / h, 1.0 / h ** 2])
    weight = quadrature(np.exp(alpha * np.abs(grid.nodes - xi_center)), h) * math.exp(max(beta, 0.0) * T)
    return noise ** 2 * weight


def stability_report(run, supplier, profile, eta_inf, alpha, beta, theta, delta,
                     frame_stride=1, fit_floor_rel=1e-9):
    grid = run.grid
    xi = grid.nodes
    h = grid.h
    phi_inf = profile.evaluate(xi - eta_inf)[0]
    xi_c = profile.xi_star + eta_inf
    n = len(run.times)
    sup = np.zeros(n)
    W = np.zeros((n, 4))
    Dw = np.zeros((n, 4))
    W0 = np.zeros((n, 4))
    psi_end = np.zeros(n)
    frames = []
    for i, (t, v) in enumerate(zip(run.times, run.v)):
        fr = supplier(t)
        if i % frame_stride == 0:
            frames.append(fr)
        sup[i] = float(np.max(np.abs(fr.U + v - phi_inf)))
        ders = psi_derivatives(v, h)
        psi_end[i] = ders[0][-1]
        W[i], Dw[i] = weighted_functionals(ders, h, xi, alpha, beta, xi_c, t, grid.L)
        W0[i], _ = weighted_functionals(ders, h, xi, 0.0, 0.0, xi_c, t)
    # running time integrals of the dissipation terms
    diss = np.zeros_like(Dw)
    if n > 1:
        steps = np.diff(run.times)[:, None] * 0.5 * (Dw[1:] + Dw[:-1])
        diss[1:] = np.cumsum(steps, axis=0)
    notes = []
    beta_meas, window = float("nan"), (float("nan"), float("nan"))
    if sup.max() > 0:
        try:
            fit = fit_decay(run.times, sup, floor=fit_floor_rel * sup.max())
            beta_meas, window = fit.rate, (fit.t_start, fit.t_end)
        except InsufficientDecayError as exc:
            notes.append(f"sup-norm fit: {exc}")
    else:
        notes.append("sup-distance identically zero; rate undefined")
    T = float(run.times[-1])
    floor_w = weighted_noise_floor(grid, profile.jump, alpha, beta, xi_c, T)
    floor_plain = weighted_noise_floor(grid, profile.jump, 0.0, 0.0, xi_c, T)
    HR, HC = verify_H_bound(frames, delta, theta, profile.sigma0, grid)
    gap = ansatz_gap_audit(frames, profile, eta_inf, theta, grid)
    return StabilityReport(
        times=run.times, supnorm=sup, weighted=W, dissipation=diss, weighted_plain=W0,
        beta_meas=beta_meas, beta_fit_window=window, drift_rate=run.drift_rate(),
        psi_end=psi_end, H_R=HR, H_C=HC, ansatz_gap=gap,
        weighted_ratio=_early_ratio(W, run.times, floor_w),
        weighted_ratio_plain=_early_ratio(W0, run.times, floor_plain),
        notes=notes)


def monotone_tail(series, times, rel=1e-3, abs_floor=0.0):
    """True when the series never rises by more than rel (relative) over the final half."""
    sel = times >= times[0] + 0.5 * (times[-1] - times[0])
    s = series[sel]
    rises = s[1:] - s[:-1] * (1.0 + rel)
    return bool(np.all(rises <= abs_floor))


def envelope_monotone(series):
    return np.allclose(upper_envelope(series), np.abs(series))
