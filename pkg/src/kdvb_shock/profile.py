"""Viscous shock profile of the KdV-Burgers traveling-wave problem.

The profile phi solves the once-integrated equation

    mu phi'' = gamma phi' - [f(phi) - f(u_l) - s (phi - u_l)],

with phi -> u_l at -inf and phi -> u_r at +inf.  For mu > 0 the state u_r is
a saddle of the phase plane; the connection is traced backward in xi from
the stable manifold of u_r into the unstable node u_l.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .flux import LineGrid, check_profile_existence, fd_derivative


class ProfileError(ValueError):
    pass


def linear_rates(setup):
    """Tail exponents of phi: (rate at u_r (<0), slow rate at u_l (>0), fast rate at u_l)."""
    s, mu, gam = setup.speed, setup.mu, setup.gamma
    fr = float(setup.flux.d1(setup.u_right))
    fl = float(setup.flux.d1(setup.u_left))
    if mu == 0.0:
        return (fr - s) / gam, (fl - s) / gam, math.inf
    lam_r = (gam - math.sqrt(gam ** 2 + 4 * mu * (s - fr))) / (2 * mu)
    disc_l = gam ** 2 + 4 * mu * (s - fl)
    root = math.sqrt(max(disc_l, 0.0))
    return lam_r, (gam - root) / (2 * mu), (gam + root) / (2 * mu)


def _hermite5(x, nodes_x0, h, y, dy, d2y):
    """Quintic Hermite interpolation on a uniform grid (values, 1st, 2nd derivs)."""
    n = len(y)
    pos = (x - nodes_x0) / h
    i = np.clip(np.floor(pos).astype(np.int64), 0, n - 2)
    t = pos - i
    t2 = t * t
    t3 = t2 * t
    t4 = t3 * t
    t5 = t4 * t
    h0 = 1 - 10 * t3 + 15 * t4 - 6 * t5
    h1 = t - 6 * t3 + 8 * t4 - 3 * t5
    h2 = 0.5 * (t2 - 3 * t3 + 3 * t4 - t5)
    h3 = 10 * t3 - 15 * t4 + 6 * t5
    h4 = -4 * t3 + 7 * t4 - 3 * t5
    h5 = 0.5 * (t3 - 2 * t4 + t5)
    j = i + 1
    return (h0 * y[i] + h * h1 * dy[i] + h * h * h2 * d2y[i]
            + h3 * y[j] + h * h4 * dy[j] + h * h * h5 * d2y[j])


@dataclass(frozen=True)
class ProfileTable:
    setup: object
    grid: LineGrid
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    d3phi: np.ndarray
    sigma0: float
    anchor: float
    rate_right: float
    rate_left: float
    rate_left_fast: float
    xi_star: float = field(default=float("nan"))

    @property
    def jump(self):
        return self.setup.jump

    @property
    def g(self):
        return (self.phi - self.setup.u_right) / self.jump

    @property
    def dg(self):
        return self.dphi / self.jump

    @property
    def d2g(self):
        return self.d2phi / self.jump

    @property
    def d3g(self):
        return self.d3phi / self.jump

    def _closure(self, phi, dphi):
        """phi'' and phi''' from the profile equation."""
        st = self.setup
        fp = st.flux.d1(phi) - st.speed
        if st.mu == 0.0:
            d2 = fp * dphi / st.gamma
            d3 = (st.flux.d2(phi) * dphi ** 2 + fp * d2) / st.gamma
        else:
            d2 = (st.gamma * dphi - st.reduced_flux(phi)) / st.mu
            d3 = (st.gamma * d2 - fp * dphi) / st.mu
        return d2, d3

    def evaluate(self, xi):
        """phi, phi', phi'', phi''' at arbitrary points (exponential tails outside the table)."""
        xi = np.asarray(xi, dtype=float)
        st = self.setup
        L, h = self.grid.L, self.grid.h
        inside = np.clip(xi, -L, L)
        phi = _hermite5(inside, -L, h, self.phi, self.dphi, self.d2phi)
        if st.mu == 0.0:
            dphi = st.reduced_flux(phi) / st.gamma
        else:
            dphi = _hermite5(inside, -L, h, self.dphi, self.d2phi, self.d3phi)
        right = xi > L
        left = xi < -L
        if np.any(right):
            amp = (self.phi[-1] - st.u_right) * np.exp(self.rate_right * (xi[right] - L))
            phi[right] = st.u_right + amp
            dphi[right] = self.rate_right * amp
        if np.any(left):
            amp = (st.u_left - self.phi[0]) * np.exp(self.rate_left * (xi[left] + L))
            phi[left] = st.u_left - amp
            dphi[left] = -self.rate_left * amp
        d2, d3 = self._closure(phi, dphi)
        return phi, dphi, d2, d3

    def g_derivatives(self, xi):
        """g, g', g'', g''' at arbitrary points."""
        phi, d1, d2, d3 = self.evaluate(xi)
        j = self.jump
        return (phi - self.setup.u_right) / j, d1 / j, d2 / j, d3 / j

    def residual(self, accuracy=4):
        """Max-norm residual of the integrated profile equation using grid derivatives."""
        st = self.setup
        h = self.grid.h
        d1 = fd_derivative(self.phi, h, 1, accuracy)
        if st.mu == 0.0:
            res = st.gamma * d1 - st.reduced_flux(self.phi)
        else:
            d2 = fd_derivative(self.phi, h, 2, accuracy)
            res = st.mu * d2 - st.gamma * d1 + st.reduced_flux(self.phi)
        return float(np.max(np.abs(res)))

    def with_sonic_point(self, xi_star):
        return ProfileTable(**{**self.__dict__, "xi_star": float(xi_star)})

    def to_csv(self, path):
        g, dg, d2g, d3g = self.g, self.dg, self.d2g, self.d3g
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            fh.write(f"# sigma0={self.sigma0!r} xi_star={self.xi_star!r} s={self.setup.speed!r}\n")
            w.writerow(["xi", "phi", "dphi", "g", "dg", "d2g", "d3g"])
            for row in zip(self.grid.nodes, self.phi, self.dphi, g, dg, d2g, d3g):
                w.writerow([f"{v:.17g}" for v in row])


def _trajectory_mu0(setup, span):
    """gamma phi' = F(phi), integrated outward from the mid state.

    Each half carries the distance to its end state, y = phi - u_r (right) or
    u_l - phi (left), with F re-expanded about that state, so rtol acts on y
    and the tails keep relative accuracy.
    """
    st = setup
    mid = 0.5 * (st.u_left + st.u_right)
    p = st.flux.poly
    reduced = p - p(st.u_left) - st.speed * (p.__class__([-st.u_left, 1.0]))

    def about(u0):
        q = reduced(p.__class__([u0, 1.0]))
        c = q.coef.copy()
        c[0] = 0.0
        return p.__class__(c)

    Fr = about(st.u_right)   # F(u_r + y)
    Fl = about(st.u_left)    # F(u_l - y) = Fl(-y)
    opts = dict(method="DOP853", rtol=1e-13, atol=1e-300, dense_output=True)
    fwd = solve_ivp(lambda x, y: Fr(y) / st.gamma, (0.0, span), [mid - st.u_right], **opts)
    bwd = solve_ivp(lambda x, y: -Fl(-y) / st.gamma, (0.0, -span), [st.u_left - mid], **opts)

    def sol(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        pos = x >= 0
        if np.any(pos):
            out[pos] = st.u_right + fwd.sol(x[pos])[0]
        if not np.all(pos):
            out[~pos] = st.u_left - bwd.sol(x[~pos])[0]
        return out

    return sol, -span, span


def _trajectory_saddle(setup, eps_seed, lam_r, span):
    st = setup
    mu, gam = st.mu, st.gamma

    def rhs(x, y):
        return [y[1], (gam * y[1] - st.reduced_flux(y[0])) / mu]

    def near_left(x, y):
        return y[0] - (st.u_left - eps_seed)

    near_left.terminal = True
    y0 = [st.u_right + eps_seed, lam_r * eps_seed]
    res = solve_ivp(rhs, (0.0, -span), y0, method="DOP853", rtol=1e-12,
                    atol=1e-15 * st.jump, dense_output=True, events=near_left)
    if res.status != 1:
        raise ProfileError("backward shooting did not reach u_l; increase the span "
                           "or check the existence condition")
    x_end = float(res.t_events[0][0])
    xs = np.linspace(x_end, 0.0, 4001)
    ys = res.sol(xs)
    if np.any(ys[1] >= 0.0) or np.any(np.diff(ys[0]) >= 0.0):
        raise ProfileError("trajectory is not monotone: the profile-existence "
                           "hypothesis gamma^2 + 4 mu (s - f'(u_l)) >= 0 fails in practice")
    return res.sol, x_end, 0.0


def solve_profile(setup, L_phi=None, N=None, eps_seed=None, anchor=0.0, h=0.01):
    """Tabulate the viscous shock profile on [-L_phi, L_phi].

    ``anchor`` is the point where phi equals the mid state (u_l + u_r)/2.
    """
    report = check_profile_existence(setup)
    if not report.passed:
        raise ProfileError(f"profile existence condition fails (discriminant {report.discriminant:g})")
    lam_r, lam_l, lam_lf = linear_rates(setup)
    sigma0 = min(abs(lam_r), lam_l)
    if L_phi is None:
        L_phi = 40.0 / sigma0 + abs(anchor)
    if L_phi < 20.0 / sigma0:
        raise ProfileError(f"L_phi={L_phi:g} below 20/sigma0={20 / sigma0:g}")
    if N is None:
        N = 2 * int(math.ceil(L_phi / h))
    if eps_seed is None:
        eps_seed = 1e-8 * setup.jump
    grid = LineGrid(L_phi, N)
    mid = 0.5 * (setup.u_left + setup.u_right)
    span = 400.0 / sigma0

    if setup.mu == 0.0:
        # stop where the distance to either state is ~1e-8 of the jump; beyond that
        # phi rounds onto u_l and phi' = F(phi) would vanish, so the linear tails take over
        reach = math.log(1e8) / sigma0
        sol, x_lo, x_hi = _trajectory_mu0(setup, min(L_phi + abs(anchor) + 1.0, reach))
        x_anchor = 0.0
        phi_of = sol
    else:
        sol, x_lo, x_hi = _trajectory_saddle(setup, eps_seed, lam_r, span)
        x_anchor = brentq(lambda x: sol(x)[0] - mid, x_lo, x_hi, xtol=1e-15, rtol=1e-15)
        phi_of = lambda x: sol(x)[0]

    # table coordinate xi  <->  trajectory coordinate x = xi - anchor + x_anchor
    xi = grid.nodes
    x = xi - anchor + x_anchor
    phi = np.empty_like(xi)
    dphi = np.empty_like(xi)
    inside = (x >= x_lo) & (x <= x_hi)
    if setup.mu == 0.0:
        phi[inside] = phi_of(x[inside])
        dphi[inside] = setup.reduced_flux(phi[inside]) / setup.gamma
    else:
        y = sol(x[inside])
        phi[inside], dphi[inside] = y[0], y[1]
    # linear-manifold tails beyond the integrated trajectory
    right = x > x_hi
    if np.any(right):
        a = phi_of(np.array([x_hi]))[0] - setup.u_right
        amp = a * np.exp(lam_r * (x[right] - x_hi))
        phi[right] = setup.u_right + amp
        dphi[right] = lam_r * amp
    left = x < x_lo
    if np.any(left):
        a = setup.u_left - phi_of(np.array([x_lo]))[0]
        amp = a * np.exp(lam_l * (x[left] - x_lo))
        phi[left] = setup.u_left - amp
        dphi[left] = -lam_l * amp

    table = ProfileTable(setup=setup, grid=grid, phi=phi, dphi=dphi,
                         d2phi=np.zeros_like(phi), d3phi=np.zeros_like(phi),
                         sigma0=sigma0, anchor=float(anchor), rate_right=lam_r,
                         rate_left=lam_l, rate_left_fast=lam_lf)
    d2, d3 = table._closure(phi, dphi)
    table = ProfileTable(**{**table.__dict__, "d2phi": d2, "d3phi": d3})
    _validate(table)
    return table.with_sonic_point(locate_sonic_point(table))


def _validate(table):
    st = table.setup
    interior = table.dphi[1:-1]
    if np.any(interior >= 0.0):
        k = int(np.argmax(interior >= 0.0)) + 1
        raise ProfileError(f"phi' >= 0 at node {k} (xi={table.grid.nodes[k]:g})")
    if np.any(table.phi > st.u_left) or np.any(table.phi < st.u_right):
        raise ProfileError("profile leaves (u_r, u_l)")
    tol_end = 10.0 * math.exp(-table.sigma0 * table.grid.L)
    g = table.g
    if g[0] < 1.0 - tol_end or g[-1] > tol_end:
        raise ProfileError(f"end states not reached within {tol_end:.3g}; increase L_phi")


def locate_sonic_point(profile):
    """xi* with f'(phi(xi*)) = s: bracket on the nodes, bisect, then one Newton step."""
    st = profile.setup
    vals = st.flux.d1(profile.phi) - st.speed
    # decreasing in xi; first node where it turns negative
    k = int(np.argmax(vals < 0.0))
    if k == 0 or vals[k - 1] < 0.0:
        raise ProfileError("sonic point not bracketed on the profile grid")
    nodes = profile.grid.nodes
    a, b = nodes[k - 1], nodes[k]

    def fun(x):
        return float(st.flux.d1(profile.evaluate(np.array([x]))[0][0]) - st.speed)

    for _ in range(60):
        m = 0.5 * (a + b)
        if fun(m) > 0.0:
            a = m
        else:
            b = m
        if b - a < 1e-13:
            break
    x = 0.5 * (a + b)
    phi, dphi, _, _ = profile.evaluate(np.array([x]))
    slope = float(st.flux.d2(phi[0]) * dphi[0])
    if slope != 0.0:
        x = x - fun(x) / slope
    return float(x)


@dataclass(frozen=True)
class RateConstants:
    xi_star: float
    G: float
    B: float
    C0: float
    alpha: float
    theta_ref: float
    beta: float
    beta_admissible_sup: float
    beta_admissible: float
    margin_theory: float
    margin_admissible: float
    c0_branch: str

    @property
    def rate_test_available(self):
        return self.beta > 0.0

    def to_dict(self):
        return dict(self.__dict__)


def weight_matrix(C0, alpha, beta, mu, gamma, sign):
    off = mu * alpha ** 2 + gamma * alpha * sign
    return np.array([[C0 * alpha - beta, off], [off, 2 * gamma - 3 * alpha * mu * sign]])


def weight_matrix_margin(C0, alpha, beta, mu, gamma):
    """Smallest eigenvalue of the weight matrix over both signs of xi - xi*."""
    return min(float(np.linalg.eigvalsh(weight_matrix(C0, alpha, beta, mu, gamma, sg))[0])
               for sg in (1.0, -1.0))


def weight_matrix_det_trace(C0, alpha, beta, mu, gamma):
    dets, traces = [], []
    for sg in (1.0, -1.0):
        m = weight_matrix(C0, alpha, beta, mu, gamma, sg)
        dets.append(float(np.linalg.det(m)))
        traces.append(float(np.trace(m)))
    return min(dets), min(traces)


def decay_constants(profile, alpha, theta_ref, admissible_fraction=0.5):
    """Rate constants G, B, C0 and the predicted exponential rate beta.

    ``beta`` is the closed-form min{C0 alpha, theta, C0 - alpha (alpha mu + gamma)^2
    / (2 gamma - 3 alpha mu)}.  Separately, ``beta_admissible_sup`` is the
    supremum of rates allowed by the inequality system (equivalently, by
    positivity of the 2x2 weight matrix), and ``beta_admissible`` is
    ``admissible_fraction`` of it.
    """
    st = profile.setup
    mu, gam = st.mu, st.gamma
    upper = min(2 * gam / (3 * mu) if mu > 0 else math.inf, profile.sigma0)
    if not 0.0 < alpha < upper:
        raise ValueError(f"alpha={alpha:g} outside (0, {upper:g})")
    xs = profile.xi_star
    u = np.linspace(st.u_right, st.u_left, 10001)
    G = float(np.min(np.abs(st.flux.d2(u))))
    window = np.linspace(xs - 1.0, xs + 1.0, 4001)
    phi_w, dphi_w, _, _ = profile.evaluate(window)
    B = float(np.min(np.abs(dphi_w)))
    p_m, p_0, p_p = profile.evaluate(np.array([xs - 1.0, xs, xs + 1.0]))[0]
    spread = min(abs(p_m - p_0), abs(p_p - p_0))
    if B / alpha <= spread:
        C0, branch = G * B / alpha, "B/alpha"
    else:
        C0, branch = G * spread, "phi-spread"
    third = C0 - alpha * (alpha * mu + gam) ** 2 / (2 * gam - 3 * alpha * mu)
    beta = min(C0 * alpha, theta_ref, third)
    sup_adm = min(C0 * alpha, theta_ref,
                  alpha * C0 - alpha ** 2 * (alpha * mu + gam) ** 2 / (2 * gam - 3 * alpha * mu))
    beta_adm = admissible_fraction * sup_adm if sup_adm > 0 else float("nan")
    return RateConstants(
        xi_star=xs, G=G, B=B, C0=float(C0), alpha=float(alpha), theta_ref=float(theta_ref),
        beta=float(beta), beta_admissible_sup=float(sup_adm), beta_admissible=float(beta_adm),
        margin_theory=weight_matrix_margin(C0, alpha, beta, mu, gam),
        margin_admissible=(weight_matrix_margin(C0, alpha, beta_adm, mu, gam)
                           if sup_adm > 0 else float("nan")),
        c0_branch=branch,
    )


@dataclass(frozen=True)
class TailReport:
    C_right: float
    C_left: float
    C_derivs: tuple
    C: float
    floor: float
    monotone: bool


class TailBoundViolation(AssertionError):
    pass


def verify_tail_bounds(profile, floor_rel=1e-12, C_max=None):
    """Fit the smallest C in the exponential tail bounds of g and g', g'', g'''.

    Samples below ``floor_rel`` (relative) are rounding noise and are skipped.
    """
    xi = profile.grid.nodes
    s0 = profile.sigma0
    g, dg, d2g, d3g = profile.g, profile.dg, profile.d2g, profile.d3g
    if np.any(dg[1:-1] >= 0.0):
        k = int(np.argmax(dg[1:-1] >= 0.0)) + 1
        raise TailBoundViolation(f"g' >= 0 at node {k}")
    st = profile.setup
    pos = xi > 0
    neg = xi < 0
    # 1 - g evaluated from the left state to keep relative precision
    one_minus_g = (st.u_left - profile.phi) / profile.jump

    def fitted(vals, mask, weight):
        sel = mask & (np.abs(vals) > floor_rel)
        return float(np.max(np.abs(vals[sel]) * weight[sel])) if np.any(sel) else 0.0

    c_right = fitted(g, pos, np.exp(s0 * xi))
    c_left = fitted(one_minus_g, neg, np.exp(-s0 * xi))
    allm = np.ones_like(xi, dtype=bool)
    w = np.exp(s0 * np.abs(xi))
    c_der = tuple(fitted(d, allm, w) for d in (dg, d2g, d3g))
    C = max(c_right, c_left, *c_der)
    if C_max is not None and C > C_max:
        raise TailBoundViolation(f"fitted tail constant {C:g} exceeds {C_max:g}")
    return TailReport(c_right, c_left, c_der, C, floor_rel, True)
