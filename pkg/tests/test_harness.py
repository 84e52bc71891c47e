import csv
import json

import numpy as np
import pytest

from kdvb_shock.harness import (CHECK_NAMES, ConfigError, ScenarioConfig, blended_g,
                                compact_bump, convergence_study, make_initial_data, run_scenario)

RATE_CHECKS = ("periodic_decay", "eta_two_routes", "supnorm_convergence", "rate")


@pytest.fixture(scope="module")
def small_run(small_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    manifest, res = run_scenario(small_config, str(out))
    return manifest, res, out


def test_config_hash_is_canonical():
    a = ScenarioConfig()
    b = ScenarioConfig.from_dict(json.loads(json.dumps(a.to_dict())))
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 64
    assert a.replace(mu=0.2).config_hash() != a.config_hash()
    # float formatting is fixed, so representation noise does not change the hash
    assert a.replace(mu=0.1 + 1e-17).config_hash() == a.config_hash()
    assert json.loads(a.canonical()) == json.loads(a.canonical())
    keys = list(json.loads(a.canonical()))
    assert keys == sorted(keys)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"mu": 0.1, "typo": 1})
    with pytest.raises(ConfigError):
        ScenarioConfig(N=1601)
    with pytest.raises(ConfigError):
        ScenarioConfig(modes_left=((0.01, 20, 0.0),), cell_nodes=64)
    with pytest.raises(ConfigError):
        ScenarioConfig(modes_left=((0.01, 1.5, 0.0),))
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"T": 5.0, "modes_left": [[0.01, 2, 0.5]]}))
    cfg = ScenarioConfig.from_json(p)
    assert cfg.T == 5.0 and cfg.modes_left == ((0.01, 2.0, 0.5),)


def test_blend_is_exact_outside_half_domain(profile):
    xi = np.linspace(-80, 80, 1601)
    G = blended_g(profile, xi, 80.0)
    assert np.all(G[xi <= -40] == 1.0) and np.all(G[xi >= 40] == 0.0)
    inner = np.abs(xi) <= 20
    assert np.array_equal(G[inner], profile.g_derivatives(xi[inner])[0])


def test_bump_has_requested_mass():
    x = np.linspace(-10, 10, 20001)
    b = compact_bump(x, 1.0, 2.0, 0.3)
    assert np.trapezoid(b, x) == pytest.approx(0.3, rel=1e-10)
    assert np.all(b[np.abs(x - 1.0) >= 2.0] == 0.0)


def test_unperturbed_initial_data(profile):
    cfg = ScenarioConfig(modes_left=(), modes_right=())
    init = make_initial_data(cfg, profile)
    assert np.array_equal(init.u0, profile.evaluate(init.grid.nodes)[0])
    assert abs(init.eta0) < 1e-12 and init.delta == 0.0


def test_bump_initial_shift(profile):
    m = 0.01
    cfg = ScenarioConfig(modes_left=(), modes_right=(), bump={"center": 0.0, "width": 4.0, "mass": m})
    init = make_initial_data(cfg, profile)
    assert init.eta0 == pytest.approx(m / 2.0, rel=0.05)


def test_far_fields_match_outside_half_domain(profile):
    init = make_initial_data(ScenarioConfig(), profile)
    xi = init.grid.nodes
    left, right = xi <= -40, xi >= 40
    # only the exponentially small profile tail remains (e^{-sigma0 L/2})
    assert np.max(np.abs(init.u0[left] - init.u_l0.evaluate(xi[left]))) < 1e-15
    assert np.max(np.abs(init.u0[right] - init.u_r0.evaluate(xi[right]))) < 1e-15
    assert init.u_l0.mean == 1.0 and init.u_r0.mean == -1.0


def test_random_modes_are_seeded(profile):
    cfg = ScenarioConfig(random_modes=2, seed=7)
    a = make_initial_data(cfg, profile).u0
    b = make_initial_data(ScenarioConfig(random_modes=2, seed=7), profile).u0
    c = make_initial_data(cfg.replace(seed=8), profile).u0
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_perturbation_cap(profile):
    with pytest.raises(ConfigError):
        make_initial_data(ScenarioConfig(modes_left=((0.5, 1, 0.0),)), profile)


def test_small_scenario_passes(small_run):
    manifest, res, out = small_run
    assert manifest.failed_stage is None
    assert set(manifest.checks) == set(CHECK_NAMES)
    bad = {k: v for k, v in manifest.checks.items() if v["verdict"] != "pass"}
    assert not bad, bad
    assert manifest.passed


def test_artifacts_written(small_run):
    manifest, res, out = small_run
    for name in ("report.json", "manifest.json", "supnorm.csv", "weighted.csv", "profile.csv",
                 "shift.csv", "shift.json", "periodic_left.csv", "periodic_right.json",
                 "fields_t0.csv", "fields_t5.csv"):
        assert (out / name).exists(), name
    with open(out / "weighted.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "W0", "W1", "W2", "W3", "D1", "D2", "D3", "D4"]
    with open(out / "fields_t5.csv") as fh:
        assert next(csv.reader(fh)) == ["xi", "u", "U", "v", "Psi"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_hash"] == manifest.config_hash and man["passed"] is True
    assert all(man["checks"][k]["verdict"] in ("pass", "fail", "not-applicable") for k in CHECK_NAMES)
    rep = json.loads((out / "report.json").read_text())
    for key in ("beta_theory", "beta_meas", "eta0", "eta_inf_ode", "eta_inf_formula", "drift_rate"):
        assert key in rep
    # CSV values carry full double precision
    sup = np.loadtxt(out / "supnorm.csv", delimiter=",", skiprows=1)
    assert np.array_equal(sup[:, 1], res["report"].supnorm)


def test_rerun_is_deterministic(small_config, small_run):
    _, res, _ = small_run
    _, again = run_scenario(small_config)
    a, b = res["report_dict"], again["report_dict"]
    for key, val in a.items():
        if isinstance(val, float):
            assert b[key] == pytest.approx(val, rel=1e-12, abs=1e-300), key
    assert np.array_equal(res["run"].v, again["run"].v)


def test_threads_do_not_change_results(small_config, small_run):
    _, res, _ = small_run
    _, threaded = run_scenario(small_config, threads=2)
    assert np.array_equal(res["traj"].eta, threaded["traj"].eta)


def test_zero_perturbation_marks_fits_not_applicable(small_config):
    manifest, res = run_scenario(small_config.replace(modes_left=(), modes_right=()))
    assert manifest.failed_stage is None
    for k in ("periodic_decay", "eta_two_routes", "supnorm_convergence", "rate"):
        assert manifest.checks[k]["verdict"] == "not-applicable", k
    others = [k for k in CHECK_NAMES if k not in RATE_CHECKS]
    assert all(manifest.checks[k]["verdict"] == "pass" for k in others)
    assert np.max(res["report"].supnorm) < 1e-14


def test_stage_failure_is_recorded(small_config, tmp_path):
    # a 2-unit horizon is too short for the flux-defect tail fit
    manifest, res = run_scenario(small_config.replace(T=2.0), str(tmp_path))
    assert manifest.failed_stage == "periodic"
    assert "TailFitError" in manifest.error
    assert not manifest.passed
    assert manifest.checks["profile_residual"]["verdict"] == "pass"
    assert manifest.checks["rate"]["verdict"] == "fail"
    assert (tmp_path / "profile.csv").exists() and (tmp_path / "manifest.json").exists()


def test_study_needs_three_levels(small_config):
    with pytest.raises(ValueError):
        convergence_study(small_config, levels=2)
