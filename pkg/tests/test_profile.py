import math

import numpy as np
import pytest

from kdvb_shock.flux import ShockSetup, burgers, fd_derivative, polynomial, quadratic_linear
from kdvb_shock.profile import (ProfileError, TailBoundViolation, decay_constants, linear_rates,
                                solve_profile, verify_tail_bounds, weight_matrix_margin)

# closed-form roots of mu lam^2 - gamma lam + (f'(u) - s) = 0 for Burgers, u = (1, -1),
# gamma = 1, mu = 0.1
SIGMA0 = (1 - math.sqrt(1.4)) / 0.2  # at u_r: f' - s = -1
RATE_LEFT = (1 - math.sqrt(0.6)) / 0.2  # at u_l: f' - s = +1


def test_linear_rates_closed_form(setup):
    lam_r, lam_l, lam_lf = linear_rates(setup)
    assert lam_r == pytest.approx(SIGMA0, abs=1e-14)
    assert lam_l == pytest.approx(RATE_LEFT, abs=1e-14)
    assert lam_lf == pytest.approx((1 + math.sqrt(0.6)) / 0.2, abs=1e-13)


def test_sigma0_is_slower_tail(profile):
    assert profile.sigma0 == pytest.approx(abs(SIGMA0), abs=1e-14)
    assert profile.sigma0 == pytest.approx(0.91608, abs=1e-5)


def test_tanh_oracle_without_dispersion():
    st = ShockSetup(1.0, -1.0, 0.0, 1.0, burgers(), oracle=True)
    prof = solve_profile(st)
    xi = prof.grid.nodes
    sel = np.abs(xi) <= 20
    assert np.max(np.abs(prof.phi[sel] + np.tanh(xi[sel] / 2))) <= 1e-8
    # off-grid values from the quintic Hermite
    x = np.linspace(-20, 20, 4001) + 0.0037
    assert np.max(np.abs(prof.evaluate(x)[0] + np.tanh(x / 2))) <= 1e-8
    d = prof.evaluate(x)[1]
    assert np.max(np.abs(d + 0.5 / np.cosh(x / 2) ** 2)) <= 1e-8


def test_residual_monotone_and_endpoints(profile):
    assert profile.residual() <= 1e-8
    assert np.all(profile.dphi[1:-1] < 0)
    tol = 10 * math.exp(-profile.sigma0 * profile.grid.L)
    assert 1 - profile.g[0] <= tol and profile.g[-1] <= tol
    assert np.all(profile.phi <= 1.0) and np.all(profile.phi >= -1.0)


def test_anchor_is_midpoint(profile):
    assert profile.evaluate(np.array([0.0]))[0][0] == pytest.approx(0.0, abs=1e-12)


def test_sonic_point_at_midstate_for_burgers(profile):
    # f'(phi) = phi = s = 0 happens where phi is the mid state, i.e. at the anchor
    assert profile.xi_star == pytest.approx(0.0, abs=1e-10)


def test_sonic_point_for_shifted_flux():
    st = ShockSetup(1.0, -1.0, 0.1, 1.0, quadratic_linear(0.5))
    prof = solve_profile(st, anchor=1.5)
    phi_star = prof.evaluate(np.array([prof.xi_star]))[0][0]
    assert st.flux.d1(phi_star) == pytest.approx(st.speed, abs=1e-10)
    assert prof.xi_star == pytest.approx(1.5, abs=1e-10)


def test_translation_covariance(profile, setup):
    a = 2.5
    moved = solve_profile(setup, anchor=a)
    x = np.linspace(-30, 30, 601) + 0.013
    for k in range(4):
        assert np.max(np.abs(moved.evaluate(x)[k] - profile.evaluate(x - a)[k])) < 1e-9
    assert moved.xi_star == pytest.approx(profile.xi_star + a, abs=1e-10)


def test_off_grid_matches_finer_table(setup, profile):
    fine = solve_profile(setup, h=0.005)
    # odd nodes of the finer table sit midway between coarse nodes
    idx = np.flatnonzero(np.abs(fine.grid.nodes) < 30)
    idx = idx[idx % 2 == 1]
    phi, dphi, _, _ = profile.evaluate(fine.grid.nodes[idx])
    assert np.max(np.abs(phi - fine.phi[idx])) < 1e-9
    assert np.max(np.abs(dphi - fine.dphi[idx])) < 1e-9


def test_closure_derivatives_match_finite_differences(profile):
    h = profile.grid.h
    assert np.max(np.abs(fd_derivative(profile.dphi, h, 1) - profile.d2phi)) < 1e-7
    assert np.max(np.abs(fd_derivative(profile.d2phi, h, 1) - profile.d3phi)) < 1e-7


def test_g_is_normalized_profile(profile):
    assert np.allclose(profile.g, (profile.phi + 1.0) / 2.0, atol=1e-15)
    g, g1, _, _ = profile.g_derivatives(np.array([-200.0, 200.0]))
    assert g[0] == pytest.approx(1.0, abs=1e-15) and g[1] == pytest.approx(0.0, abs=1e-15)
    assert abs(g1).max() < 1e-60


def test_tails_decay_at_linear_rates(profile):
    xi = profile.grid.nodes
    sel = (xi > 10) & (xi < 25)
    rate = np.polyfit(xi[sel], np.log(profile.g[sel]), 1)[0]
    assert rate == pytest.approx(SIGMA0, rel=1e-4)
    sel = (xi < -10) & (xi > -25)
    rate = np.polyfit(xi[sel], np.log(1 - profile.g[sel]), 1)[0]
    assert rate == pytest.approx(RATE_LEFT, rel=1e-4)


def test_tail_bound_constant_stable(setup, profile):
    a = verify_tail_bounds(profile)
    b = verify_tail_bounds(solve_profile(setup, h=0.005))
    assert math.isfinite(a.C) and a.C > 0
    assert abs(a.C / b.C - 1) <= 0.1
    with pytest.raises(TailBoundViolation):
        verify_tail_bounds(profile, C_max=0.1 * a.C)


def test_symmetric_tail_constants_without_dispersion():
    prof = solve_profile(ShockSetup(1.0, -1.0, 0.0, 1.0, burgers(), oracle=True))
    rep = verify_tail_bounds(prof)
    # -tanh(xi/2) profile: g = 1/(1+e^xi), so both one-sided constants are 1; samples
    # down to the 1e-12 audit floor carry ~1e-16/1e-12 relative rounding from phi
    assert rep.C_right == pytest.approx(1.0, abs=1e-3)
    assert rep.C_left == pytest.approx(1.0, abs=1e-3)
    assert rep.C_right == pytest.approx(rep.C_left, abs=1e-12)
    assert max(rep.C_derivs) == pytest.approx(1.0, abs=1e-6)


def test_existence_failure_raises():
    with pytest.raises(ProfileError):
        solve_profile(ShockSetup(1.0, -1.0, 1.0, 1.0, burgers()))


def test_short_table_rejected(setup):
    with pytest.raises(ProfileError):
        solve_profile(setup, L_phi=5.0)


def test_cubic_flux_profile():
    st = ShockSetup(1.0, -0.5, 0.05, 1.0, polynomial([0.0, 0.0, 0.5, 0.1]))
    prof = solve_profile(st)
    assert prof.residual() <= 1e-8
    assert np.all(prof.dphi[1:-1] < 0)


def test_decay_constants_reference(profile):
    c = decay_constants(profile, 0.3, 1.0)
    assert c.G == 1.0
    assert c.c0_branch in ("B/alpha", "phi-spread")
    third = c.C0 - 0.3 * (0.3 * 0.1 + 1) ** 2 / (2 - 0.09)
    assert c.beta == pytest.approx(min(c.C0 * 0.3, 1.0, third), abs=1e-15)
    # the closed-form beta does not make the weight matrix positive; the admissible one does
    assert c.margin_admissible > 0
    assert c.beta_admissible == pytest.approx(0.5 * c.beta_admissible_sup)
    assert weight_matrix_margin(c.C0, 0.3, c.beta_admissible_sup, 0.1, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_decay_constants_resolution_independent(setup, profile):
    a = decay_constants(profile, 0.3, 1.0)
    b = decay_constants(solve_profile(setup, h=0.02), 0.3, 1.0)
    for k in ("B", "C0", "beta", "beta_admissible"):
        assert getattr(a, k) == pytest.approx(getattr(b, k), abs=1e-4)


def test_alpha_range_enforced(profile):
    with pytest.raises(ValueError):
        decay_constants(profile, 0.0, 1.0)
    with pytest.raises(ValueError):
        decay_constants(profile, 1.0, 1.0)  # above sigma0


def test_csv_header(tmp_path, profile):
    p = tmp_path / "profile.csv"
    profile.to_csv(p)
    first, second = p.read_text().splitlines()[:2]
    assert first.startswith("# sigma0=") and "xi_star=" in first and "s=" in first
    assert second == "xi,phi,dphi,g,dg,d2g,d3g"
    data = np.loadtxt(p, delimiter=",", skiprows=2)
    assert np.array_equal(data[:, 1], profile.phi)
