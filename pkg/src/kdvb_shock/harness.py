"""Scenario configuration, initial data, the end-to-end pipeline and artifacts."""
import csv
import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from . import __version__, kernels
from .fitting import InsufficientDecayError
from .flux import LineGrid, ShockSetup, flux_from_dict
from .fullline import (AnsatzSupplier, anti_derivative, monotone_tail, solve_perturbation,
                       stability_report)
from .periodic import (PeriodicField, flux_defect_integrals, measure_decay, resample,
                       solve_periodic)
from .profile import decay_constants, solve_profile, verify_tail_bounds
from .shift import (ShiftSystem, eta_infinity_formula, fit_shift_decay, integrate_shift,
                    solve_initial_shift)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    flux: dict = field(default_factory=lambda: {"kind": "burgers"})
    u_left: float = 1.0
    u_right: float = -1.0
    mu: float = 0.1
    gamma: float = 1.0
    period_left: float = 2 * math.pi
    period_right: float = math.pi * math.sqrt(2)
    # perturbation modes: [amplitude, integer wavenumber, phase] -> A sin(n kappa xi + phase)
    modes_left: tuple = ((0.02, 1, 0.0),)
    modes_right: tuple = ((0.02, 1, 0.0),)
    bump: dict = None  # {"center", "width", "mass"}
    L: float = 80.0
    N: int = 1600
    cell_nodes: int = 64
    T: float = 40.0
    dt: float = 0.01
    dt_out: float = 0.1
    alpha: float = 0.3
    admissible_fraction: float = 0.5
    profile_h: float = 0.01
    delta_cap_fraction: float = 0.1
    snapshot_times: tuple = (0.0, 10.0, 40.0)
    seed: int = 0
    random_modes: int = 0  # extra random modes per side drawn from ``seed``

    def __post_init__(self):
        if self.N % 2:
            raise ConfigError("N must be even (node at xi = 0)")
        if self.cell_nodes % 2:
            raise ConfigError("cell_nodes must be even")
        for name in ("modes_left", "modes_right"):
            object.__setattr__(self, name, tuple(tuple(float(x) for x in m) for m in getattr(self, name)))
            for m in getattr(self, name):
                if len(m) != 3 or m[1] != int(m[1]) or m[1] < 1:
                    raise ConfigError(f"{name}: modes are (amplitude, positive integer n, phase)")
                if 2 * m[1] >= self.cell_nodes // 2:
                    raise ConfigError(f"{name}: wavenumber {m[1]:g} under-resolved by cell_nodes")
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["modes_left"] = [list(m) for m in self.modes_left]
        d["modes_right"] = [list(m) for m in self.modes_right]
        d["snapshot_times"] = list(self.snapshot_times)
        return d

    def canonical(self):
        def fix(x):
            if isinstance(x, float):
                return float(f"{x:.15g}")
            if isinstance(x, dict):
                return {k: fix(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [fix(v) for v in x]
            return x
        return json.dumps(fix(self.to_dict()), sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def setup(self):
        return ShockSetup(self.u_left, self.u_right, self.mu, self.gamma, flux_from_dict(self.flux))

    def grid(self):
        return LineGrid(self.L, self.N)

    def all_modes(self):
        """Explicit modes plus the seeded random ones (amplitude <= smallest explicit)."""
        left, right = list(self.modes_left), list(self.modes_right)
        if self.random_modes:
            rng = np.random.default_rng(self.seed)
            amp = min([m[0] for m in left + right] or [0.01])
            kmax = max(1, self.cell_nodes // 8)
            for side in (left, right):
                for _ in range(self.random_modes):
                    side.append((float(amp * rng.uniform(0.1, 0.5)), int(rng.integers(1, kmax + 1)),
                                 float(rng.uniform(0, 2 * math.pi))))
        return left, right

    @property
    def perturbed(self):
        left, right = self.all_modes()
        amp = sum(abs(m[0]) for m in left + right)
        mass = abs(self.bump["mass"]) if self.bump else 0.0
        return amp > 0 or mass > 0

    @property
    def far_field_perturbed(self):
        left, right = self.all_modes()
        return sum(abs(m[0]) for m in left + right) > 0


def reference_config(**kw):
    return ScenarioConfig(**kw)


def mode_sum(modes, period):
    kappa = 2 * math.pi / period

    def fn(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for a, n, ph in modes:
            out += a * np.sin(n * kappa * x + ph)
        return out

    return fn


def _smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(x, 0.0, 1.0)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


_BUMP_Z = quad(lambda x: math.exp(-1.0 / (1.0 - x * x)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-12,
               limit=200)[0]


def compact_bump(xi, center, width, mass):
    x = (np.asarray(xi, dtype=float) - center) / width
    inside = np.abs(x) < 1.0
    out = np.zeros_like(x)
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return mass * out / (width * _BUMP_Z)


def blended_g(profile, xi, L):
    """g, forced to exactly 1 for xi <= -L/2 and exactly 0 for xi >= L/2."""
    g = profile.g_derivatives(xi)[0]
    s_left = 1.0 - _smooth_step((xi + L / 2) / (L / 4))
    s_right = _smooth_step((xi - L / 4) / (L / 4))
    return g + (1.0 - g) * s_left - g * s_right


@dataclass
class InitialData:
    grid: LineGrid
    u0: np.ndarray
    w0l: PeriodicField
    w0r: PeriodicField
    u_l0: PeriodicField
    u_r0: PeriodicField
    eta0: float
    delta: float


def make_initial_data(config, profile):
    st = profile.setup
    grid = config.grid()
    xi = grid.nodes
    left, right = config.all_modes()
    M = config.cell_nodes
    w0l = PeriodicField.from_function(mode_sum(left, config.period_left), config.period_left, M)
    w0r = PeriodicField.from_function(mode_sum(right, config.period_right), config.period_right, M)
    u_l0 = PeriodicField(w0l.period, w0l.coeffs + np.eye(1, len(w0l.coeffs))[0] * st.u_left)
    u_r0 = PeriodicField(w0r.period, w0r.coeffs + np.eye(1, len(w0r.coeffs))[0] * st.u_right)
    G = blended_g(profile, xi, grid.L)
    phi = profile.evaluate(xi)[0]
    u0 = phi + w0l.evaluate(xi) * G + w0r.evaluate(xi) * (1.0 - G)
    if config.bump:
        b = config.bump
        if abs(b["center"]) + b["width"] > grid.L / 2:
            raise ConfigError("bump must lie inside [-L/2, L/2]")
        u0 = u0 + compact_bump(xi, b["center"], b["width"], b["mass"])
    delta = max(w0l.deviation_norms()[2], w0r.deviation_norms()[2])
    if delta > config.delta_cap_fraction * st.jump:
        raise ConfigError(f"perturbation H1 size {delta:.3g} exceeds the cap "
                          f"{config.delta_cap_fraction * st.jump:.3g}")
    eta0 = solve_initial_shift(u0, grid, u_l0, u_r0, profile)
    return InitialData(grid, u0, w0l, w0r, u_l0, u_r0, eta0, float(delta))


def run_periodic_pair(config, setup, threads=1, T=None):
    T = config.T if T is None else T
    M = config.cell_nodes
    jobs = []
    for p, ubar, modes in ((config.period_left, setup.u_left, config.all_modes()[0]),
                           (config.period_right, setup.u_right, config.all_modes()[1])):
        w = mode_sum(modes, p)(np.arange(M) * p / M)
        jobs.append((setup.flux, setup.mu, setup.gamma, setup.speed, p, w, ubar, T, config.dt))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=2) as ex:
            futs = [ex.submit(solve_periodic, *j) for j in jobs]
            return tuple(f.result() for f in futs)
    return tuple(solve_periodic(*j) for j in jobs)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{float(v):.17g}" for v in r])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


@dataclass
class RunManifest:
    config_hash: str
    versions: dict
    started: float
    finished: float
    artifacts: dict
    checks: dict
    failed_stage: str = None
    error: str = None

    @property
    def passed(self):
        if self.failed_stage:
            return False
        return all(v["verdict"] != "fail" for v in self.checks.values())

    def to_dict(self):
        return _jsonable(dataclasses.asdict(self) | {"passed": self.passed})


def _verdict(ok, value=None, threshold=None, applicable=True, detail=None):
    if not applicable:
        v = "not-applicable"
    else:
        v = "pass" if ok else "fail"
    d = {"verdict": v}
    if value is not None:
        d["value"] = value
    if threshold is not None:
        d["threshold"] = threshold
    if detail:
        d["detail"] = detail
    return d


CHECK_NAMES = (
    "profile_residual", "profile_monotone", "tail_bounds", "periodic_mass", "periodic_decay",
    "eta_two_routes", "supnorm_convergence", "rate", "weight_matrix", "conservation",
    "H_bound", "weighted_bounded", "psi_initial",
)


def run_scenario(config, out_dir=None, threads=1, backend=None):
    """profile -> periodic pair -> shift -> full line -> report.

    Returns (manifest, results dict).  Stage errors are recorded in the
    manifest; artifacts written before the error are kept.
    """
    started = time.time()
    res = {}
    checks = {}
    artifacts = {}
    stage = "setup"
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def art(name):
        p = os.path.join(out_dir, name)
        artifacts[name] = p
        return p

    try:
        setup = config.setup()
        stage = "profile"
        prof = solve_profile(setup, h=config.profile_h)
        res["profile"] = prof
        resid = prof.residual()
        checks["profile_residual"] = _verdict(resid <= 1e-8, resid, 1e-8)
        checks["profile_monotone"] = _verdict(bool(np.all(prof.dphi[1:-1] < 0)))
        tails = verify_tail_bounds(prof)
        checks["tail_bounds"] = _verdict(math.isfinite(tails.C), tails.C)
        if out_dir:
            prof.to_csv(art("profile.csv"))

        stage = "periodic"
        hl, hr = run_periodic_pair(config, setup, threads)
        res["hist_l"], res["hist_r"] = hl, hr
        drift = max(hl.mass_drift(), hr.mass_drift())
        checks["periodic_mass"] = _verdict(drift <= 1e-12, drift, 1e-12)
        thetas = []
        for side, hist in (("left", hl), ("right", hr)):
            try:
                thetas.append(measure_decay(hist))
            except InsufficientDecayError:
                thetas.append(None)
        res["decay"] = thetas
        measured = [d for d in thetas if d is not None]
        if measured:
            theta = min(d.theta_meas for d in measured)
            lin = min(d.theta_linear for d in measured)
            checks["periodic_decay"] = _verdict(abs(theta / lin - 1) <= 0.15, theta, lin)
        else:
            theta = min(setup.gamma * (2 * math.pi / p) ** 2
                        for p in (config.period_left, config.period_right))
            checks["periodic_decay"] = _verdict(True, applicable=False)
        res["theta"] = theta
        dl = flux_defect_integrals(hl, setup.flux, setup.speed)
        dr = flux_defect_integrals(hr, setup.flux, setup.speed)
        res["defects"] = (dl, dr)
        if out_dir:
            hl.to_csv(art("periodic_left.csv"))
            hr.to_csv(art("periodic_right.csv"))
            hl.to_json(art("periodic_left.json"))
            hr.to_json(art("periodic_right.json"))

        stage = "shift"
        init = make_initial_data(config, prof)
        res["init"] = init
        traj = integrate_shift(init.eta0, hl, hr, prof, T=config.T, delta=init.delta)
        eta_f, part1, part2, gap = eta_infinity_formula(init.u0, init.grid, init.w0l, init.w0r,
                                                        prof, dl, dr)
        traj.eta_inf_formula = eta_f
        if gap > 1e-10:
            traj.notes.append(f"mass-defect integrand {gap:.3g} at the grid ends")
        if config.far_field_perturbed:
            try:
                fit_shift_decay(traj)
            except InsufficientDecayError as exc:
                traj.notes.append(f"shift decay fit: {exc}")
        res["traj"] = traj
        diff = abs(eta_f - traj.eta_inf_ode)
        converged = abs(traj.eta[-1] - traj.eta_inf_ode) < 1e-4 and (
            not np.isfinite(traj.tail_bound) or traj.tail_bound < 1e-4)
        checks["eta_two_routes"] = _verdict(diff <= 1e-3 and converged, diff, 1e-3,
                                            applicable=config.perturbed)
        if out_dir:
            traj.to_csv(art("shift.csv"))
            traj.to_json(art("shift.json"))

        stage = "fullline"
        constants = decay_constants(prof, config.alpha, theta, config.admissible_fraction)
        res["constants"] = constants
        grid = init.grid
        system = ShiftSystem(prof, hl, hr)
        supplier = AnsatzSupplier(prof, grid, hl, hr, traj, system)
        v0 = init.u0 - supplier(0.0).U
        run = solve_perturbation(v0, supplier, grid, setup, config.T, config.dt, config.dt_out,
                                 backend=backend)
        res["run"] = run
        eta_inf = traj.eta_inf_ode
        beta_w = constants.beta_admissible if constants.beta_admissible_sup > 0 else 0.0
        rep = stability_report(run, supplier, prof, eta_inf, config.alpha, beta_w, theta,
                               init.delta)
        res["report"] = rep

        sup0, supT = rep.supnorm[0], rep.supnorm[-1]
        app = config.perturbed and sup0 > 0
        mono = monotone_tail(rep.supnorm, rep.times, rel=1e-3, abs_floor=1e-12)
        checks["supnorm_convergence"] = _verdict(app and supT <= 0.01 * sup0 and mono,
                                                 supT / sup0 if sup0 else 0.0, 0.01,
                                                 applicable=app)
        rate_app = app and constants.beta > 0 and math.isfinite(rep.beta_meas)
        checks["rate"] = _verdict(rate_app and rep.beta_meas >= 0.8 * constants.beta,
                                  rep.beta_meas, 0.8 * constants.beta, applicable=rate_app)
        checks["weight_matrix"] = _verdict(constants.margin_admissible > 0,
                                           constants.margin_admissible, 0.0,
                                           detail={"margin_theory": constants.margin_theory})
        checks["conservation"] = _verdict(rep.drift_rate <= 1e-6, rep.drift_rate, 1e-6)
        hfinite = bool(np.all(np.isfinite(rep.H_C)))
        checks["H_bound"] = _verdict(hfinite, rep.H_C.tolist())
        b_adm, b_plain = rep.weighted_bounded(3.0)
        checks["weighted_bounded"] = _verdict(b_adm and b_plain,
                                              [rep.weighted_ratio.tolist(),
                                               rep.weighted_ratio_plain.tolist()], 3.0)
        psi0 = abs(rep.psi_end[0])
        checks["psi_initial"] = _verdict(psi0 <= 1e-10, psi0, 1e-10)

        stage = "artifacts"
        report = _report_dict(config, setup, prof, res, constants, rep, traj, init, part1, part2)
        res["report_dict"] = report
        if out_dir:
            _write_run_artifacts(out_dir, config, prof, supplier, run, rep, report, art)
        failed, err = None, None
    except Exception as exc:  # recorded, not swallowed: the manifest marks the stage
        failed, err = stage, f"{type(exc).__name__}: {exc}"
        res["exception"] = exc
    for name in CHECK_NAMES:
        checks.setdefault(name, {"verdict": "fail" if failed else "not-applicable",
                                 "detail": "stage did not run" if failed else None})
    manifest = RunManifest(
        config_hash=config.config_hash(),
        versions={"kdvb_shock": __version__, "numpy": np.__version__, "backend": kernels.BACKEND_NAME},
        started=started, finished=time.time(), artifacts=dict(artifacts), checks=checks,
        failed_stage=failed, error=err)
    if out_dir:
        artifacts["manifest.json"] = os.path.join(out_dir, "manifest.json")
        manifest.artifacts = dict(artifacts)
        with open(artifacts["manifest.json"], "w") as fh:
            json.dump(manifest.to_dict(), fh, indent=2)
    return manifest, res


def _report_dict(config, setup, prof, res, constants, rep, traj, init, part1, part2):
    dl, dr = res["defects"]
    return _jsonable({
        "config_hash": config.config_hash(),
        "speed": setup.speed,
        "sigma0": prof.sigma0,
        "xi_star": prof.xi_star,
        "profile_residual": prof.residual(),
        "theta_meas": res["theta"],
        "decay": [d.to_dict() if d else None for d in res["decay"]],
        "defects_left": dl.to_dict(),
        "defects_right": dr.to_dict(),
        "eta0": traj.eta0,
        "eta_inf_ode": traj.eta_inf_ode,
        "eta_inf_formula": traj.eta_inf_formula,
        "eta_inf_mass_part": part1,
        "eta_inf_flux_part": part2,
        "eta_T": float(traj.eta[-1]),
        "shift_fit_C": traj.fit_C,
        "shift_fit_theta": traj.fit_theta,
        "delta": init.delta,
        "constants": constants.to_dict(),
        "beta_theory": constants.beta,
        "beta_admissible": constants.beta_admissible,
        "beta_meas": rep.beta_meas,
        "beta_fit_window": list(rep.beta_fit_window),
        "supnorm_initial": rep.supnorm[0],
        "supnorm_final": rep.supnorm[-1],
        "drift_rate": rep.drift_rate,
        "psi_end_max": float(np.max(np.abs(rep.psi_end))),
        "H_bound_C": rep.H_C,
        "ansatz_gap_max": rep.ansatz_gap.max(axis=0),
        "weighted_ratio": rep.weighted_ratio,
        "weighted_ratio_plain": rep.weighted_ratio_plain,
        "boundary_margin_max": float(np.max(res["run"].margins)),
        "notes": rep.notes + traj.notes,
    })


def _write_run_artifacts(out_dir, config, prof, supplier, run, rep, report, art):
    with open(art("report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    _write_csv(art("supnorm.csv"), ["t", "sup_distance"], zip(rep.times, rep.supnorm))
    _write_csv(art("weighted.csv"), ["t", "W0", "W1", "W2", "W3", "D1", "D2", "D3", "D4"],
               (np.concatenate([[t], w, d]) for t, w, d in zip(rep.times, rep.weighted,
                                                                rep.dissipation)))
    xi = run.grid.nodes
    for ts in config.snapshot_times:
        i = int(np.argmin(np.abs(run.times - ts)))
        v = run.v[i]
        U = supplier(run.times[i]).U
        psi = anti_derivative(v, run.grid.h)
        _write_csv(art(f"fields_t{run.times[i]:g}.csv"), ["xi", "u", "U", "v", "Psi"],
                   zip(xi, U + v, U, v, psi))


# ---------------------------------------------------------------- convergence


def _order(e1, e2, ratio=2.0):
    if e1 <= 0 or e2 <= 0:
        return float("nan")
    return math.log(e1 / e2) / math.log(ratio)


def convergence_study(config, levels=3, threads=1, T_full=4.0, T_periodic=2.0):
    """Observed orders for profile, periodic, shift and full-line discretizations."""
    if levels < 3:
        raise ValueError("levels must be at least 3")
    setup = config.setup()
    out = {}

    # profile: residual at h, h/2, h/4 (4th-order residual stencils)
    hs = [config.profile_h * 4 / 2 ** k for k in range(levels)]
    res = [solve_profile(setup, h=h).residual() for h in hs]
    out["profile"] = {"h": hs, "residual": res,
                      "orders": [_order(a, b) for a, b in zip(res, res[1:])]}

    # periodic: snapshot differences against the finest cell
    M0 = config.cell_nodes // 2
    left = config.all_modes()[0]
    p = config.period_left
    finals = []
    Ms = [M0 * 2 ** k for k in range(levels)]
    for M in Ms:
        w = mode_sum(left, p)(np.arange(M) * p / M)
        h = solve_periodic(setup.flux, setup.mu, setup.gamma, setup.speed, p, w, setup.u_left,
                           T_periodic, config.dt)
        finals.append(h.coeffs[-1])
    K = len(finals[0])
    ref = resample(finals[-1], 4 * Ms[-1])
    errs = [float(np.max(np.abs(resample(a, 4 * Ms[-1]) - ref))) for a in finals[:-1]]
    out["periodic"] = {"M": Ms, "error_vs_finest": errs, "floor": errs[-1]}

    # shift stepping: eta(T) at dt, dt/2, dt/4 over shared histories
    prof = solve_profile(setup, h=config.profile_h)
    hl, hr = run_periodic_pair(config, setup, threads, T=T_full)
    dts = [0.2 / 2 ** k for k in range(levels + 1)]
    eta_T = [integrate_shift(0.0, hl, hr, prof, T=T_full, dt=d).eta[-1] for d in dts]
    diffs = [abs(a - b) for a, b in zip(eta_T, eta_T[1:])]
    out["shift"] = {"dt": dts, "eta_T": eta_T, "diffs": diffs,
                    "orders": [_order(a, b) for a, b in zip(diffs, diffs[1:])]}

    # full line: v(T) at h, h/2, h/4 with a fixed small dt
    def fullline(N):
        cfg = config.replace(N=N, T=T_full)
        init = make_initial_data(cfg, prof)
        traj = integrate_shift(init.eta0, hl, hr, prof, T=T_full)
        system = ShiftSystem(prof, hl, hr)
        sup = AnsatzSupplier(prof, init.grid, hl, hr, traj, system)
        v0 = init.u0 - sup(0.0).U
        run = solve_perturbation(v0, sup, init.grid, setup, T_full, config.dt, T_full)
        return run.v[-1]

    Ns = [config.N * 2 ** k for k in range(levels)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            vs = list(ex.map(fullline, Ns))
    else:
        vs = [fullline(N) for N in Ns]
    # compare on the coarse nodes
    coarse = [v[:: 2 ** k] for k, v in enumerate(vs)]
    diffs = [float(np.max(np.abs(a - b))) for a, b in zip(coarse, coarse[1:])]
    out["fullline"] = {"N": Ns, "diffs": diffs,
                       "orders": [_order(a, b) for a, b in zip(diffs, diffs[1:])]}
    flags = []
    for key in ("shift", "fullline"):
        d = out[key]["diffs"]
        if any(b >= a for a, b in zip(d, d[1:])):
            flags.append(f"{key}: non-monotone error sequence")
    out["flags"] = flags
    return out
