"""Command-line entry point: ``kdvb-shock <subcommand> [--config c.json] [--out dir]``.

Exit status is 0 iff every applicable check of the subcommand passes.
"""
import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from .fitting import InsufficientDecayError
from .harness import (ConfigError, ScenarioConfig, _jsonable, convergence_study,
                      make_initial_data, run_periodic_pair, run_scenario)
from .periodic import PeriodicHistory, flux_defect_integrals, measure_decay
from .profile import decay_constants, solve_profile, verify_tail_bounds
from .shift import eta_infinity_formula, fit_shift_decay, integrate_shift

log = logging.getLogger("kdvb_shock")


def _load_config(path):
    if path is None:
        return ScenarioConfig()
    return ScenarioConfig.from_json(path)


def _save(out, name, doc):
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, name)
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2)
    return path


def _finish(checks):
    bad = [k for k, v in checks.items() if v == "fail"]
    for k, v in checks.items():
        print(f"{k:24s} {v}")
    return 1 if bad else 0


def cmd_profile(args, cfg):
    setup = cfg.setup()
    prof = solve_profile(setup, h=cfg.profile_h)
    tails = verify_tail_bounds(prof)
    theta_ref = min(setup.gamma * (2 * math.pi / p) ** 2 for p in (cfg.period_left, cfg.period_right))
    const = decay_constants(prof, cfg.alpha, theta_ref, cfg.admissible_fraction)
    prof.to_csv(os.path.join(args.out, "profile.csv"))
    resid = prof.residual()
    checks = {
        "profile_residual": "pass" if resid <= 1e-8 else "fail",
        "profile_monotone": "pass" if np.all(prof.dphi[1:-1] < 0) else "fail",
        "tail_bounds": "pass" if math.isfinite(tails.C) else "fail",
    }
    _save(args.out, "profile.json", {"sigma0": prof.sigma0, "xi_star": prof.xi_star,
                                     "speed": setup.speed, "residual": resid,
                                     "tail_C": tails.C, "theta_ref_poincare": theta_ref,
                                     "constants": const.to_dict(), "checks": checks})
    return _finish(checks)


def _periodic(args, cfg):
    setup = cfg.setup()
    paths = [os.path.join(args.out, f"periodic_{s}.json") for s in ("left", "right")]
    if getattr(args, "reuse", False) and all(os.path.exists(p) for p in paths):
        log.info("reusing periodic histories from %s", args.out)
        return setup, tuple(PeriodicHistory.from_json(p) for p in paths)
    hl, hr = run_periodic_pair(cfg, setup, args.threads)
    for side, h in (("left", hl), ("right", hr)):
        h.to_csv(os.path.join(args.out, f"periodic_{side}.csv"))
        h.to_json(os.path.join(args.out, f"periodic_{side}.json"))
    return setup, (hl, hr)


def cmd_periodic(args, cfg):
    setup, (hl, hr) = _periodic(args, cfg)
    checks = {}
    summary = {}
    for side, h in (("left", hl), ("right", hr)):
        drift = h.mass_drift()
        checks[f"mass_{side}"] = "pass" if drift <= 1e-12 else "fail"
        try:
            d = measure_decay(h)
            ok = abs(d.theta_meas / d.theta_linear - 1) <= 0.15
            checks[f"decay_{side}"] = "pass" if ok else "fail"
            dec = d.to_dict()
        except InsufficientDecayError as exc:
            checks[f"decay_{side}"] = "not-applicable"
            dec = {"error": str(exc)}
        summary[side] = {"mass_drift": drift, "decay": dec,
                         "defects": flux_defect_integrals(h, setup.flux, setup.speed).to_dict()}
    _save(args.out, "periodic.json", {"sides": summary, "checks": checks})
    return _finish(checks)


def cmd_shift(args, cfg):
    args.reuse = True
    setup, (hl, hr) = _periodic(args, cfg)
    prof = solve_profile(setup, h=cfg.profile_h)
    init = make_initial_data(cfg, prof)
    traj = integrate_shift(init.eta0, hl, hr, prof, T=cfg.T, delta=init.delta)
    dl = flux_defect_integrals(hl, setup.flux, setup.speed)
    dr = flux_defect_integrals(hr, setup.flux, setup.speed)
    traj.eta_inf_formula = eta_infinity_formula(init.u0, init.grid, init.w0l, init.w0r, prof, dl, dr)[0]
    if cfg.far_field_perturbed:
        try:
            fit_shift_decay(traj)
        except InsufficientDecayError as exc:
            traj.notes.append(str(exc))
    traj.to_csv(os.path.join(args.out, "shift.csv"))
    traj.to_json(os.path.join(args.out, "shift.json"))
    diff = abs(traj.eta_inf_formula - traj.eta_inf_ode)
    checks = {"eta_two_routes": ("pass" if diff <= 1e-3 else "fail") if cfg.perturbed
              else "not-applicable"}
    return _finish(checks)


def cmd_simulate(args, cfg):
    manifest, res = run_scenario(cfg, args.out, threads=args.threads)
    if manifest.failed_stage:
        print(f"stage {manifest.failed_stage} failed: {manifest.error}", file=sys.stderr)
    return _finish({k: v["verdict"] for k, v in manifest.checks.items()})


def cmd_study(args, cfg):
    study = convergence_study(cfg, levels=args.level, threads=args.threads)
    fl = study["fullline"]["orders"]
    sh = study["shift"]["orders"]
    checks = {
        "fullline_order": "pass" if fl and min(fl) >= 3.5 else "fail",
        "shift_order": "pass" if sh and all(abs(o - 4) <= 0.5 for o in sh) else "fail",
        "periodic_floor": "pass" if study["periodic"]["floor"] <= 1e-10 else "fail",
        "monotone_errors": "pass" if not study["flags"] else "fail",
    }
    study["checks"] = checks
    _save(args.out, "study.json", study)
    return _finish(checks)


def cmd_report(args, cfg):
    path = os.path.join(args.out, "manifest.json")
    if not os.path.exists(path):
        print(f"no manifest at {path}", file=sys.stderr)
        return 2
    with open(path) as fh:
        man = json.load(fh)
    rep_path = os.path.join(args.out, "report.json")
    if os.path.exists(rep_path):
        with open(rep_path) as fh:
            rep = json.load(fh)
        for key in ("eta0", "eta_inf_ode", "eta_inf_formula", "beta_theory", "beta_meas",
                    "theta_meas", "drift_rate", "supnorm_initial", "supnorm_final"):
            print(f"{key:24s} {rep.get(key)}")
    if man.get("failed_stage"):
        print(f"failed stage: {man['failed_stage']} ({man.get('error')})")
    code = _finish({k: v["verdict"] for k, v in man["checks"].items()})
    return 1 if man.get("failed_stage") else code


COMMANDS = {"profile": cmd_profile, "periodic": cmd_periodic, "shift": cmd_shift,
            "simulate": cmd_simulate, "study": cmd_study, "report": cmd_report}


def build_parser():
    p = argparse.ArgumentParser(prog="kdvb-shock", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="scenario JSON (default: reference scenario)")
        sp.add_argument("--out", default="kdvb_out", help="artifact directory")
        sp.add_argument("--threads", type=int, default=1)
        if name == "study":
            sp.add_argument("--level", type=int, default=3, help="refinement levels (>= 3)")
        if name == "periodic":
            sp.add_argument("--reuse", action="store_true", help="load histories from --out if present")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _load_config(args.config)
    except (ConfigError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    return COMMANDS[args.command](args, cfg)


if __name__ == "__main__":
    sys.exit(main())
