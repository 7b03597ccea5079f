"""Command line interface: ``lockin {check,estimate,validate,simulate,export}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig
from .domain import DomainEstimate
from .estimator import LockInEstimator
from .exceptions import ArtifactInvalid, LockInError, ModelInvalid, NotHurwitz
from .family import read_family_csv
from .gauge import build_gauge
from .model import check_oscillatory, pll_jacobian
from .sim import (SimConfig, lyapunov_audit, monte_carlo_validate, sample_trivial_square, simulate,
                  simulate_batch)

log = logging.getLogger("lockin")

EXIT_OK = 0
EXIT_ASSUMPTION = 2
EXIT_VALIDATION = 3
EXIT_NUMERICS = 4

ARTIFACTS = ("family.csv", "growth.csv", "domain.csv", "summary.json")


def _fmt(x):
    return format(float(x), ".17g")


def _out_dir(args, cfg):
    d = args.out or cfg["output"]
    os.makedirs(d, exist_ok=True)
    return d


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sim_config(cfg):
    return SimConfig(horizon=cfg["sim"]["horizon"])


def cmd_check(args, cfg):
    try:
        model = cfg.build_model()
    except ModelInvalid as exc:
        reason = "not Hurwitz" if isinstance(exc, NotHurwitz) else "invalid model"
        print(f"FAIL: {reason}: {exc}")
        return EXIT_ASSUMPTION
    eig_a = np.linalg.eigvals(model.A)
    rep = check_oscillatory(model)
    print("eigenvalues of A:")
    for e in eig_a:
        print(f"  {e.real:.6g} {e.imag:+.6g}j")
    print("eigenvalues of the PLL Jacobian:")
    for e in np.linalg.eigvals(pll_jacobian(model)):
        print(f"  {e.real:.6g} {e.imag:+.6g}j")
    if np.max(eig_a.real) >= 0:
        print("FAIL: not Hurwitz")
        return EXIT_ASSUMPTION
    if not rep.passed:
        print("FAIL: non-oscillatory PLL linearization")
        return EXIT_ASSUMPTION
    print("PASS")
    return EXIT_OK


def run_estimate(cfg, out, progress=None):
    """Fit the configured model and write all artifacts to ``out``; returns the estimator."""
    model = cfg.build_model()
    est = LockInEstimator(**cfg.estimator_params())
    est.fit(model, progress=progress)
    os.makedirs(out, exist_ok=True)
    est.family_.to_csv(os.path.join(out, "family.csv"))
    est.growth_.to_csv(os.path.join(out, "growth.csv"))
    est.domain_.to_csv(os.path.join(out, "domain.csv"))
    summary = {
        "V_bar": _fmt(est.V_bar_),
        "V_bar_bar": _fmt(est.V_bar_bar_),
        "gamma": _fmt(est.gauge_.gamma),
        "version": cfg.version,
        "P": [[_fmt(v) for v in row] for row in est.gauge_.P],
        "n_cycles": len(est.family_.cycles) - 1,
        "max_abs_dtheta": _fmt(est.family_.cycles[-1].max_abs_dtheta()),
    }
    _write_json(os.path.join(out, "summary.json"), summary)
    return est


def cmd_estimate(args, cfg):
    progress = None
    if args.verbose:
        def progress(V, c):
            log.info("level %.6g  max|dtheta| %.4f", V, c.max_abs_dtheta())
    est = run_estimate(cfg, _out_dir(args, cfg), progress)
    print(f"V_bar = {_fmt(est.V_bar_)}")
    print(f"V_bar_bar = {_fmt(est.V_bar_bar_)}")
    return EXIT_OK


def load_artifacts(out):
    """Reload ``(family, domain, summary)`` written by ``estimate``."""
    with open(os.path.join(out, "summary.json")) as fh:
        summary = json.load(fh)
    fam = read_family_csv(os.path.join(out, "family.csv"))
    est = DomainEstimate.from_csv(os.path.join(out, "domain.csv"), float(summary["V_bar"]),
                                  float(summary["V_bar_bar"]))
    return fam, est, summary


def cmd_validate(args, cfg):
    out = _out_dir(args, cfg)
    fam, est, summary = load_artifacts(out)
    model = cfg.build_model()
    gauge = build_gauge(model.A, cfg["gauge"]["margin"])
    sc = cfg["sim"]
    rep = monte_carlo_validate(est, fam, gauge, model, sc["N"], seed=sc["seed"], inset=sc["inset"],
                               cfg=_sim_config(cfg))
    report = {"monte_carlo": rep.as_dict()}
    n_audit = sc["audit_N"] if sc["N"] > 0 else 0
    audit_bad = 0
    if n_audit:
        rng = np.random.default_rng(sc["seed"] + 1)
        states = sample_trivial_square(est.V_bar, fam, gauge, n_audit, rng, sc["inset"])
        outs = simulate_batch(states, model, gauge, est.V_bar, _sim_config(cfg), dense=True)
        audits = [lyapunov_audit(o.t, o.y, fam, gauge) for o in outs]
        audit_bad = sum(a.n_violations > 0 for a in audits)
        report["lyapunov_audit"] = {
            "n_trajectories": n_audit,
            "n_with_violations": audit_bad,
            "max_excess": max(a.max_excess for a in audits),
            "n_converged": sum(o.converged for o in outs),
        }
    _write_json(os.path.join(out, "validation.json"), report)
    print(json.dumps(report, indent=2, sort_keys=True))
    if rep.n_slipped or audit_bad:
        print("FAIL: cycle slips or Lyapunov violations inside the estimate")
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_simulate(args, cfg):
    model = cfg.build_model()
    gauge = build_gauge(model.A, cfg["gauge"]["margin"])
    state = np.array([float(v) for v in args.state.split(",")])
    if state.shape != (6,):
        raise ConfigError("--state needs six comma-separated numbers")
    V_bar = args.v_bar
    if V_bar is None:
        try:
            with open(os.path.join(args.out or cfg["output"], "summary.json")) as fh:
                V_bar = float(json.load(fh)["V_bar"])
        except FileNotFoundError:
            V_bar = 1.0
    res = simulate(state, model, gauge, V_bar, _sim_config(cfg), dense=True)
    out = _out_dir(args, cfg)
    with open(os.path.join(out, "trajectory.csv"), "w") as fh:
        fh.write("t,dtheta,domega,x1,x2,x3,x4\n")
        for t, y in zip(res.t, res.y):
            fh.write(",".join(_fmt(v) for v in (t, *y)) + "\n")
    print(json.dumps({"converged": res.converged, "slipped": res.slipped, "t_final": res.t_final,
                      "min_dtheta": res.min_dtheta, "max_dtheta": res.max_dtheta}, sort_keys=True))
    return EXIT_OK


def cmd_export(args, cfg):
    """Write the effective configuration (defaults filled in) as YAML."""
    out = _out_dir(args, cfg)
    path = os.path.join(out, "config.yaml")
    cfg.dump(path)
    print(path)
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "estimate": cmd_estimate,
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "export": cmd_export,
}


def build_parser():
    p = argparse.ArgumentParser(prog="lockin", description="Lock-in domain estimation for PLL-CC cascades.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    p.add_argument("--preset", choices=["version-I", "version-II"], help="model preset (overrides config)")
    p.add_argument("--state", default="0,0,0,0,0,0", help="simulate: dtheta,domega,x1,x2,x3,x4")
    p.add_argument("--v-bar", type=float, help="simulate: V_bar for the convergence ball")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        cfg = cfg.with_overrides(seed=args.seed, preset=args.preset)
    except (ConfigError, OSError) as exc:
        print(f"FAIL: config: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    try:
        return COMMANDS[args.command](args, cfg)
    except (ModelInvalid, ConfigError, ArtifactInvalid, TypeError) as exc:
        print(f"FAIL [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except LockInError as exc:
        print(f"FAIL [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
