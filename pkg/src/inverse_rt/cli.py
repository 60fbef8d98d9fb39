"""Command-line entry point: ``inverse-rt {phantom,plan,improve,pareto}``.

Exit codes: 0 success, 2 invalid input, 3 infeasible, 4 internal
consistency failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace

from . import analysis, improve, inverse, phantom, rtp
from .lp import LPError

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write(path, text, mode="w"):
    with open(path, mode) as fh:
        fh.write(text)


def _out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load_problem(path):
    if not os.path.exists(path):
        raise CliError(f"{path}: no such file")
    try:
        return rtp.load_problem(path)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from None


def _load_plan(path):
    if not os.path.exists(path):
        raise CliError(f"{path}: no such file")
    try:
        with open(path) as fh:
            return rtp.Plan.from_dict(json.load(fh))
    except (json.JSONDecodeError, KeyError) as exc:
        raise CliError(f"{path}: not a plan file ({exc})") from None


def _problem_json(problem, out_dir, dij_path):
    """Problem dict whose dose-influence reference is relative to ``out_dir``."""
    return rtp.problem_to_dict(problem, os.path.relpath(dij_path, out_dir))


# ---------------------------------------------------------------------------
# commands

def cmd_phantom(args) -> int:
    if (args.preset is None) == (args.spec is None):
        raise CliError("give exactly one of --preset or a spec file")
    spec = phantom.preset(args.preset) if args.preset else phantom.load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    problem = phantom.generate(spec)
    out = _out(args)
    dij = os.path.join(out, "dose_influence.bin")
    rtp.write_dose_influence(dij, problem.dose_influence)
    _dump(os.path.join(out, "problem.json"), _problem_json(problem, out, dij))
    _dump(os.path.join(out, "phantom.json"), spec.to_dict())
    _write(os.path.join(out, "masks.pgm"), phantom.mask_pgm(spec), "wb")
    print(f"phantom: {problem.n_voxels} voxels, {problem.n_beams} beamlets, "
          f"{len(problem.structures)} structures -> {out}")
    return EXIT_OK


def _write_plan_outputs(problem, plan, out, stem):
    _dump(os.path.join(out, f"{stem}.json"), plan.to_dict())
    _write(os.path.join(out, f"{stem}_metrics.csv"), analysis.metrics_csv(problem, plan))


def cmd_plan(args) -> int:
    problem = _load_problem(args.problem)
    plan = rtp.solve_plan(problem)
    out = _out(args)
    _write_plan_outputs(problem, plan, out, "plan")
    _write(os.path.join(out, "plan_dvh.csv"), analysis.dvh_csv(problem, {"plan": plan}, args.dvh_points))
    print(f"plan: objective {plan.objective_value:.6g} -> {out}")
    return EXIT_OK


def cmd_improve(args) -> int:
    problem = _load_problem(args.problem)
    plan0 = _load_plan(args.plan)
    if plan0.voxel_doses.size != problem.n_voxels or plan0.beam_weights.size != problem.n_beams:
        raise CliError("plan does not match the problem dimensions")
    target = improve.ImprovementTarget(
        args.structure, args.alpha, args.bound, args.u_lower, args.u_upper, args.omega,
        improve.TIGHTEN if args.direction == "tighten" else improve.EXPAND, args.norm,
    )
    res = improve.improve_iteratively(problem, plan0, target, args.eps_stop, args.max_iters)
    out = _out(args)
    report = res.to_dict()
    report.update(omega=args.omega, direction=args.direction, norm=args.norm, eps_stop=args.eps_stop)
    _dump(os.path.join(out, "improvement.json"), report)
    _write_plan_outputs(res.problem, res.new_plan, out, "plan_improved")
    deltas = improve.compare_plans(plan0, res.new_plan, problem)
    _write(os.path.join(out, "comparison.csv"), improve.comparison_csv(deltas))
    _write(os.path.join(out, "dvh_before_after.csv"),
           analysis.dvh_csv(problem, {"before": plan0, "after": res.new_plan}, args.dvh_points))
    dij = os.path.join(out, "dose_influence.bin")
    rtp.write_dose_influence(dij, problem.dose_influence)
    _dump(os.path.join(out, "problem_improved.json"), _problem_json(res.problem, out, dij))
    print(f"improve: limit {res.old_limit:.4f} -> {res.learned_limit:.4f} Gy in {res.iterations} "
          f"iteration(s), converged={res.converged}")
    return EXIT_OK


def _parse_pair(text, what):
    try:
        name, frac = text.rsplit(":", 1)
        return name, float(frac)
    except ValueError:
        raise CliError(f"{what}: expected STRUCTURE:FRACTION, got {text!r}") from None


def _parse_weights(text):
    pairs = []
    try:
        for chunk in text.split(";"):
            a, b = chunk.split(",")
            pairs.append((float(a), float(b)))
    except ValueError:
        raise CliError(f"--weights: expected 'w_oar,w_target;...', got {text!r}") from None
    if any(a < 0 or b < 0 for a, b in pairs):
        raise CliError("--weights: weights must be non-negative")
    return pairs


def cmd_pareto(args) -> int:
    problem = _load_problem(args.problem)
    oar, a_oar = _parse_pair(args.oar, "--oar")
    tgt, a_tgt = _parse_pair(args.target, "--target")
    oi = problem.find_objective(oar, "max_dvh", a_oar)
    ti = problem.find_objective(tgt, "min_dvh", a_tgt)
    if oi is None:
        raise CliError(f"no Max DVH objective for {oar} at {a_oar:g}")
    if ti is None:
        raise CliError(f"no Min DVH objective for {tgt} at {a_tgt:g}")
    pairs = _parse_weights(args.weights)
    out = _out(args)
    pts = analysis.pareto_sweep(problem, oi, ti, pairs)
    _write(os.path.join(out, "pareto_original.csv"), analysis.pareto_csv(pts))
    if args.improved_limit is not None:
        improved = problem.with_limit(oi, args.improved_limit)
        pts2 = analysis.pareto_sweep(improved, oi, ti, pairs)
        _write(os.path.join(out, "pareto_improved.csv"), analysis.pareto_csv(pts2))
    print(f"pareto: {len(pairs)} point(s) -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _globals(p, suppress):
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--seed", type=int, help="override the phantom seed", **kw)
    p.add_argument("--out", help="output directory (default: current directory)", **kw)
    p.add_argument("--norm", choices=inverse.NORMS, help="distance norm for improvement", **kw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inverse-rt", description=__doc__.splitlines()[0])
    _globals(p, False)
    p.set_defaults(out=".", norm="l1", seed=None)
    sub = p.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="generate a synthetic planning problem")
    _globals(ph, True)
    ph.add_argument("spec", nargs="?", help="phantom spec JSON")
    ph.add_argument("--preset", choices=("p1", "p2", "p3", "p4"))
    ph.set_defaults(func=cmd_phantom)

    pl = sub.add_parser("plan", help="solve the planning LP")
    _globals(pl, True)
    pl.add_argument("problem")
    pl.add_argument("--dvh-points", type=int, default=101)
    pl.set_defaults(func=cmd_plan)

    im = sub.add_parser("improve", help="learn an improved dose-volume limit")
    _globals(im, True)
    im.add_argument("problem")
    im.add_argument("plan")
    im.add_argument("--structure", required=True)
    im.add_argument("--alpha", type=float, required=True, help="volume fraction of the row, in (0, 1]")
    im.add_argument("--bound", choices=("upper", "lower"), default="upper")
    im.add_argument("--omega", type=float, default=0.5)
    im.add_argument("--direction", choices=("tighten", "expand"), default="tighten")
    im.add_argument("--u-lower", type=float)
    im.add_argument("--u-upper", type=float)
    im.add_argument("--eps-stop", type=float, default=0.01)
    im.add_argument("--max-iters", type=int, default=50)
    im.add_argument("--dvh-points", type=int, default=101)
    im.set_defaults(func=cmd_improve)

    pa = sub.add_parser("pareto", help="weighted-sum sweep, original and improved limits")
    _globals(pa, True)
    pa.add_argument("problem")
    pa.add_argument("--oar", default="Rectum:0.2")
    pa.add_argument("--target", default="PTV:0.95")
    pa.add_argument("--weights", default="1,1;2,1;5,1;10,1")
    pa.add_argument("--improved-limit", type=float)
    pa.set_defaults(func=cmd_pareto)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except improve.ConsistencyError as exc:
        print(f"internal consistency error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (rtp.PlanInfeasible, improve.ImprovementInfeasible) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (phantom.PhantomError, rtp.RtpError, improve.ImprovementError, inverse.InverseError,
            LPError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RuntimeError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
