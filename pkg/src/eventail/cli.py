"""Command-line entry point: ``eventail {simulate,solve,benchmark,sweep,landscape}``.

Exit codes: 0 success, 2 usage error, 3 file I/O error, 4 config error,
5 malformed scene file, 10-24 solver and geometry errors (see
:mod:`eventail.errors`).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import harness
from .errors import EventailError
from .fileio import RunConfig, default_run_config, format_scene, read_config, read_scene, write_scene
from .rotation import CASCADE, COPLANARITY, INCIDENCE, ObjectiveSpec
from .simulator import sample_scene
from .translation import solve_full

DEFAULT_SEED = 0
EXIT_IO = 3

_FORMS = {"inc": INCIDENCE, "cop": COPLANARITY}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style config file")
    common.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    common.add_argument("--out", help="output file (default: standard output)")
    common.add_argument("--formulation", choices=sorted(_FORMS))
    common.add_argument("--parametrization", choices=["exact", "approx", "cascade"])
    common.add_argument("--gradient", choices=["fdm", "closed"])
    common.add_argument("--trials", type=int)
    common.add_argument("--workers", type=int)

    p = argparse.ArgumentParser(prog="eventail", description="Line-based event camera egomotion.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a synthetic scene file")
    s = sub.add_parser("solve", parents=[common], help="estimate motion from a scene file")
    s.add_argument("scene")
    s.add_argument("--ransac", action="store_true", help="robust solve with outlier rejection")
    sub.add_parser("benchmark", parents=[common], help="Monte Carlo accuracy summary")
    sw = sub.add_parser("sweep", parents=[common], help="benchmark over one simulation parameter")
    sw.add_argument("--axis", choices=harness.SWEEP_AXES)
    sw.add_argument("--values", help="comma-separated axis values")
    ls = sub.add_parser("landscape", parents=[common], help="objective over a 2D slice of omega")
    ls.add_argument("--scene", help="scene file (default: simulate one from the config)")
    return p


def _run_config(args) -> RunConfig:
    rc = read_config(args.config) if args.config else default_run_config()
    seed = DEFAULT_SEED if args.seed is None else args.seed
    rc = replace(rc, sim=replace(rc.sim, seed=seed))
    kw = {}
    if args.formulation:
        kw["formulation"] = _FORMS[args.formulation]
    if args.parametrization:
        kw["parametrization"] = args.parametrization
    if args.gradient:
        kw["gradient_mode"] = args.gradient
    if kw:
        merged = {"formulation": rc.spec.formulation, "parametrization": rc.spec.parametrization,
                  "exponent_p": rc.spec.exponent_p}
        if "formulation" in kw and "gradient_mode" not in kw:
            merged["gradient_mode"] = None
        else:
            merged["gradient_mode"] = rc.spec.gradient_mode
        merged.update(kw)
        rc = replace(rc, spec=ObjectiveSpec(**merged))
    if args.trials is not None:
        rc = replace(rc, trials=args.trials)
    if args.workers is not None:
        rc = replace(rc, workers=args.workers)
    return rc


def _solvers(args, rc: RunConfig):
    """Solvers to benchmark: both formulations unless one was requested."""
    if args.formulation or (args.config and rc.spec != ObjectiveSpec()):
        return (rc.spec,)
    param = args.parametrization or CASCADE
    grad = args.gradient
    out = []
    for form in (INCIDENCE, COPLANARITY):
        g = grad if (grad != "closed" or form != INCIDENCE) else None
        out.append(ObjectiveSpec(form, param, g))
    return tuple(out)


def _emit(text: str, path) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _vec(v):
    return None if v is None else [float(x) for x in v]


def cmd_simulate(args) -> int:
    rc = _run_config(args)
    scene = sample_scene(rc.sim)
    if args.out:
        write_scene(scene, args.out)
    else:
        sys.stdout.write(format_scene(scene))
    summary = sys.stdout if args.out else sys.stderr
    print(f"omega_gt = {' '.join(harness.fmt(x) for x in scene.motion.omega)}", file=summary)
    print(f"v_gt     = {' '.join(harness.fmt(x) for x in scene.motion.v)}", file=summary)
    print(f"lines = {len(scene.clusters)}, events = {sum(len(c) for c in scene.clusters)}", file=summary)
    return 0


def cmd_solve(args) -> int:
    rc = _run_config(args)
    scene = read_scene(args.scene)
    if args.ransac:
        report = harness.ransac_solve(scene.clusters, rc.spec, rc.ransac, rc.adam)
    else:
        report = solve_full(scene.clusters, rc.spec, rc.adam, rc.tau_rank)
    out = {
        "solver": harness.solver_label(rc.spec),
        "omega": _vec(report.omega_est),
        "v_dir": _vec(report.v_dir),
        "pure_rotation": bool(report.pure_rotation),
        "objective": float(report.objective_value),
        "iterations": int(report.iterations),
        "converged": bool(report.converged),
        "stages": [{"parametrization": s.parametrization, "objective": float(s.objective),
                    "iterations": int(s.iterations), "converged": bool(s.converged)}
                   for s in report.stage_trace],
        "lines": [{"index": p.line_index, "direction": _vec(p.d), "v_perp": _vec(p.v_perp),
                   "moment": _vec(p.m)} for p in report.partials],
        "excluded": [{"index": int(i), "reason": why} for i, why in report.excluded],
        "rank_ratios": [float(r) for r in report.line_ratios],
    }
    if report.inliers is not None:
        out["inlier_counts"] = [int(m.sum()) for m in report.inliers]
        out["low_confidence"] = bool(report.low_confidence)
    if scene.motion is not None:
        gt = scene.motion
        out["ground_truth"] = {"omega": _vec(gt.omega), "v": _vec(gt.v)}
        if np.any(gt.omega) or np.any(report.omega_est):
            out["eps_ang"] = harness.metric_ang(report.omega_est, gt.omega)
        if report.v_dir is not None and np.any(report.v_dir) and np.any(gt.v):
            out["eps_lin_deg"] = harness.metric_lin(report.v_dir, gt.v)
    _emit(json.dumps(out, indent=2) + "\n", args.out)
    return 0


def _metadata(rc: RunConfig, trials: int) -> dict:
    sim = rc.sim
    return {"trials": trials, "seed": sim.seed, "n_lines": sim.n_lines, "n_events": sim.n_events,
            "sigma_pixel": sim.sigma_pixel, "sigma_time": sim.sigma_time,
            "outlier_fraction": sim.outlier_fraction}


def cmd_benchmark(args) -> int:
    rc = _run_config(args)
    summaries = harness.run_benchmark(rc.sim, rc.trials, _solvers(args, rc), rc.adam,
                                      workers=rc.workers, tau_rank=rc.tau_rank)
    if args.out:
        harness.write_summary_csv(summaries.values(), args.out, _metadata(rc, rc.trials))
    print(harness.format_table(summaries.values()))
    print("# median runtime [s]: " + ", ".join(
        f"{k}={s.median_runtime:.4f}" for k, s in summaries.items()))
    return 0


def cmd_sweep(args) -> int:
    rc = _run_config(args)
    axis = args.axis or rc.sweep_axis
    values = rc.sweep_values
    if args.values:
        try:
            values = tuple(float(v) for v in args.values.split(","))
        except ValueError:
            raise ValueError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    rows = harness.run_sweep(axis, values, rc.sim, rc.trials, _solvers(args, rc), rc.adam,
                             workers=rc.workers)
    meta = {**_metadata(rc, rc.trials), "axis": axis}
    harness.write_summary_csv(rows, args.out or sys.stdout, meta)
    return 0


def cmd_landscape(args) -> int:
    rc = _run_config(args)
    scene = read_scene(args.scene) if args.scene else sample_scene(rc.sim)
    if scene.motion is None:
        raise EventailError("landscape needs a scene with ground truth")
    form = _FORMS.get(args.formulation, None) if args.formulation else rc.landscape_formulation
    land = harness.landscape_grid(scene.clusters, scene.motion.omega, form, rc.landscape_axes,
                                  rc.landscape_half_range, rc.landscape_samples)
    if args.out:
        harness.write_landscape_csv(land, args.out)
    row, col = land.argmin()
    gt_row, gt_col = land.cell_of(scene.motion.omega)
    print(f"argmin cell ({row}, {col}) at omega[{land.axes[0]}]={harness.fmt(land.first[col])}, "
          f"omega[{land.axes[1]}]={harness.fmt(land.second[row])}")
    print(f"ground-truth cell ({gt_row}, {gt_col})")
    print(f"cells within 10x of minimum: {land.fraction_near_min():.4f}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "benchmark": cmd_benchmark,
    "sweep": cmd_sweep,
    "landscape": cmd_landscape,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except EventailError as exc:
        print(f"eventail: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"eventail: IoError: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"eventail: invalid argument: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
