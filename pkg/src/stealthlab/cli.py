"""Command-line interface.

Exit status: 0 on success, 1 when a computation fails, 2 for usage and
parse errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import NoAttack, design_a1, design_a2
from .detect import DetectorSpec, estimate_roc
from .errors import ParseError, StealthLabError
from .fileio import format_float, parse_plan, read_model, write_plan
from .kalman import design
from .model import StateSpaceModel, validate
from .sim import AttackSpec, ExperimentConfig, sweep
from .stealth import converse_bound

BUNDLED = ("example1", "example2")


class UsageError(Exception):
    pass


def _float_list(text):
    try:
        vals = [float(x) for x in text.replace(" ", "").split(",") if x != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("list is empty")
    return vals


def _int_list(text):
    try:
        vals = [int(x) for x in text.replace(" ", "").split(",") if x != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("list is empty")
    return vals


def load_model(ref: str) -> StateSpaceModel:
    """Read a model file, or one of the bundled examples by name."""
    if ref in BUNDLED:
        with resources.as_file(resources.files("stealthlab") / "data" / ref / "model.ini") as p:
            return read_model(p)
    return read_model(ref)


def _model_record(m: StateSpaceModel):
    return {"name": m.name, **{k: v.tolist() for k, v in m.matrices().items()}}


def _model_from_record(rec) -> StateSpaceModel:
    return StateSpaceModel(name=rec.get("name", ""), **{k: np.array(rec[k], dtype=float)
                                                        for k in ("A", "B", "C", "Sigma_w", "Sigma_v")})


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical (sorted-key) JSON encoding."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_manifest(out: Path, command: str, model: StateSpaceModel, args: dict, seed: int,
                    plan_text=None, results=None):
    config = {"command": command, "model": _model_record(model), "args": args, "plan": plan_text}
    manifest = {
        "tool": "stealthlab",
        "version": __version__,
        "command": command,
        "config_hash": config_hash(config),
        "seed": seed,
        "output_dir": str(out),
        "config": config,
        "results": results or {},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(x) if isinstance(x, float) else x for x in row])


# --- commands ---------------------------------------------------------------

def cmd_analyze(args) -> int:
    m = load_model(args.model)
    rep = validate(m)
    kd = design(m)
    zeros = [complex(z) for z in rep.invariant_zeros]
    print(f"model: {m.name or args.model} (N_x={m.n_x}, N_u={m.n_u}, N_y={m.n_y})")
    print("invariant zeros: " + (", ".join(_fmt_complex(z) for z in zeros) if zeros else "none"))
    print(f"right-invertible: {'yes' if rep.right_invertible else 'no'}")
    if rep.right_invertible:
        print(f"relative delay: {rep.relative_delay}")
    print(f"baseline tr(PW): {kd.baseline_mse:.10g}")
    for w in rep.warnings:
        print(f"warning: {w}")
    if args.json:
        data = {
            "model": m.name,
            "invariant_zeros": [[z.real, z.imag] for z in zeros],
            "right_invertible": rep.right_invertible,
            "relative_delay": rep.relative_delay,
            "baseline_mse": kd.baseline_mse,
            "warnings": rep.warnings,
        }
        Path(args.json).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return 0


def _fmt_complex(z):
    return f"{z.real:.6g}" if abs(z.imag) < 1e-9 else f"{z.real:.6g}{z.imag:+.6g}j"


def cmd_design(args) -> int:
    m = load_model(args.model)
    kd = design(m)
    if args.eps < 0:
        raise UsageError("--eps must be non-negative")
    conv = converse_bound(args.eps, kd)
    if args.attack == "a1":
        plan = design_a1(m, kd, args.eps, seed=args.seed)
        excess = float(np.trace(plan.zeta_covariance @ np.linalg.inv(kd.Sigma_z)))
        print(f"attack a1, eps={args.eps:g}, relative delay {plan.inverse.delay}, preview {plan.inverse.preview}")
        print("zeta covariance:")
        print(np.array2string(plan.zeta_covariance, precision=6))
        print(f"predicted eps: {args.eps:.10g}")
        print(f"predicted P_W: {kd.baseline_mse + excess:.10g} (excess {excess:.6g})")
    else:
        plan = design_a2(m, kd, args.eps, seed=args.seed)
        print(f"attack a2, eps={args.eps:g}, alpha={plan.alpha:.10g}")
        print("L:")
        print(np.array2string(plan.L, precision=6))
        print("Sigma_zeta:")
        print(np.array2string(plan.Sigma_zeta, precision=6))
        print(f"predicted eps: {plan.predicted_eps:.10g}")
        print(f"predicted P_W: {plan.predicted_pw:.10g}")
        print(f"shaping error: {plan.shaping_error:.4g}")
    print(f"converse bound: {conv.bound:.10g} (baseline {conv.baseline:.10g}, excess {conv.excess:.6g})")
    write_plan(args.out, plan)
    return 0


def run_sweep(m: StateSpaceModel, a: dict, out: Path, jobs: int):
    cfg = ExperimentConfig(m, AttackSpec(a["attack"], 0.0), horizon=a["horizon"], runs=a["runs"],
                           burn_in=a["burn_in"], seed=a["seed"])
    rows = sweep(cfg, a["eps_grid"], jobs=jobs, max_lag=a["max_lag"])
    out.mkdir(parents=True, exist_ok=True)
    header = ["eps", "converse_bound", "predicted_pw", "achieved_pw", "achieved_se", "kld_rate_empirical"]
    table = [[r.eps, r.converse, r.predicted, r.achieved, r.standard_error, r.kld_rate] for r in rows]
    _write_csv(out / "sweep.csv", header, table)
    with open(out / "sweep.dat", "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in table:
            fh.write(" ".join(format_float(x) for x in row) + "\n")
    _write_manifest(out, "sweep", m, a, a["seed"])
    return rows


def cmd_sweep(args) -> int:
    m = load_model(args.model)
    grid = args.eps_grid
    if any(e < 0 for e in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise UsageError("--eps-grid must be non-negative and strictly increasing")
    a = dict(attack=args.attack, eps_grid=grid, runs=args.runs, horizon=args.horizon,
             burn_in=args.burn_in, seed=args.seed, max_lag=args.max_lag)
    rows = run_sweep(m, a, Path(args.out), args.jobs)
    for r in rows:
        print(f"eps={r.eps:g}  converse={r.converse:.6g}  predicted={r.predicted:.6g}  "
              f"achieved={r.achieved:.6g} +- {r.standard_error:.2g}  kld={r.kld_rate:.4g}")
    return 0


def run_detect(m: StateSpaceModel, plan_text: str, a: dict, out: Path, jobs: int):
    kd = design(m)
    plan = parse_plan(plan_text, m, kd)
    spec = DetectorSpec(kind=a["detector"], window=a["window"], delta=a["delta"])
    h0 = ExperimentConfig(m, NoAttack(seed=a["seed"]), horizon=a["burn_in"] + 1, runs=1,
                          burn_in=a["burn_in"], seed=a["seed"])
    h1 = ExperimentConfig(m, plan, horizon=a["burn_in"] + 1, runs=1, burn_in=a["burn_in"], seed=a["seed"])
    rep = estimate_roc(h0, h1, spec, a["horizons"], a["trials"], jobs=jobs, strict=False)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "roc.csv", ["horizon", "p_F", "p_D", "threshold"],
               [[k, pf, pd, t] for k, pf, pd, t in zip(rep.horizons, rep.p_F, rep.p_D, rep.thresholds)])
    results = {"exponent_estimate": rep.exponent_estimate, "fit_horizons": list(rep.fit_horizons),
               "stein_rate": rep.stein_rate, "trials": rep.trials}
    _write_manifest(out, "detect", m, a, a["seed"], plan_text=plan_text, results=results)
    return rep, plan


def cmd_detect(args) -> int:
    m = load_model(args.model)
    try:
        plan_text = Path(args.plan).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read plan file: {exc.strerror}", args.plan) from None
    horizons = sorted(set(args.horizons))
    if horizons[0] < 1:
        raise UsageError("--horizons must be positive")
    if not 0 < args.delta < 1:
        raise UsageError("--delta must lie in (0, 1)")
    a = dict(detector=args.detector, delta=args.delta, window=args.window, horizons=horizons,
             trials=args.trials, seed=args.seed, burn_in=args.burn_in)
    rep, plan = run_detect(m, plan_text, a, Path(args.out), args.jobs)
    for k, pf, pd in zip(rep.horizons, rep.p_F, rep.p_D):
        print(f"k={k:4d}  p_F={pf:.5f}  p_D={pd:.5f}")
    if rep.exponent_estimate is None:
        print("exponent: unfittable (fewer than two horizons with 10 false alarms)")
    else:
        print(f"exponent: {rep.exponent_estimate:.4f} (horizons {rep.fit_horizons[0]}..{rep.fit_horizons[-1]})")
    print(f"mean LLR per step under attack: {rep.stein_rate:.4f} (plan eps {getattr(plan, 'eps', 0.0):g})")
    return 0


def cmd_rerun(args) -> int:
    path = Path(args.manifest)
    try:
        manifest = json.loads(path.read_text())
        config = manifest["config"]
        command = config["command"]
        m = _model_from_record(config["model"])
    except (OSError, ValueError, KeyError) as exc:
        raise ParseError(f"unreadable manifest: {exc}", path) from None
    if config_hash(config) != manifest.get("config_hash"):
        raise ParseError("manifest config does not match its hash", path)
    out = Path(args.out) if args.out else Path(manifest["output_dir"])
    a = config["args"]
    if command == "sweep":
        run_sweep(m, a, out, args.jobs)
    elif command == "detect":
        run_detect(m, config["plan"], a, out, args.jobs)
    else:
        raise ParseError(f"cannot rerun command {command!r}", path)
    print(f"reproduced {command} into {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stealthlab", description="Design, simulate and detect stealthy actuator attacks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    jobs_default = os.cpu_count() or 1
    model_help = "model file, or example1 / example2 for the bundled plants"

    a = sub.add_parser("analyze", help="report invariant zeros, right invertibility and baseline")
    a.add_argument("model", help=model_help)
    a.add_argument("--json", help="also write the report as JSON to this path")
    a.set_defaults(func=cmd_analyze)

    d = sub.add_parser("design", help="design an attack plan")
    d.add_argument("model", help=model_help)
    d.add_argument("--attack", choices=("a1", "a2"), required=True)
    d.add_argument("--eps", type=float, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True, help="plan file to write")
    d.set_defaults(func=cmd_design)

    s = sub.add_parser("sweep", help="Monte Carlo weighted MSE across a grid of eps")
    s.add_argument("model", help=model_help)
    s.add_argument("--attack", choices=("none", "a1", "a2"), required=True)
    s.add_argument("--eps-grid", type=_float_list, required=True, help="comma-separated, increasing")
    s.add_argument("--runs", type=int, default=500)
    s.add_argument("--horizon", type=int, default=2000)
    s.add_argument("--burn-in", type=int, default=100)
    s.add_argument("--max-lag", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=jobs_default)
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("detect", help="ROC and false-alarm exponent against an attack plan")
    t.add_argument("model", help=model_help)
    t.add_argument("plan")
    t.add_argument("--detector", choices=("llr", "chi2"), default="llr")
    t.add_argument("--delta", type=float, default=0.1)
    t.add_argument("--window", type=int, default=None)
    t.add_argument("--horizons", type=_int_list, default=list(range(5, 61, 5)))
    t.add_argument("--trials", type=int, default=10000)
    t.add_argument("--burn-in", type=int, default=100)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--jobs", type=int, default=jobs_default)
    t.set_defaults(func=cmd_detect)

    r = sub.add_parser("rerun", help="reproduce a sweep or detect run from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out", help="output directory (default: the one recorded in the manifest)")
    r.add_argument("--jobs", type=int, default=jobs_default)
    r.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StealthLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
