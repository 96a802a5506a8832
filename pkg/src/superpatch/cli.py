"""Command-line entry points: segment, deconv, gen, costs."""
from __future__ import annotations

import argparse
import csv
import math
import shlex
import sys
from pathlib import Path

import numpy as np

from . import curvature, deconv, images
from .errors import InputError, SuperpatchError
from .trws import SolverOptions, relative_gap, run

REPORT_KEYS = ("command", "energy", "lower_bound", "relative_gap", "iterations", "wall_ms",
               "consistent", "model", "seed")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_report(path, fields: dict) -> None:
    lines = [f"{k}: {_fmt(v)}" for k, v in fields.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition(": ")
            out[key] = value
    return out


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "lower_bound", "energy", "ms"])
        for t in trace:
            w.writerow([t.iteration, _fmt(float(t.lower_bound)), _fmt(float(t.energy)), f"{t.ms:.3f}"])


def _solver_options(args) -> SolverOptions:
    return SolverOptions(max_iters=args.max_iters, algorithm=args.algorithm.upper())


def _finish(args, result, extra: dict) -> None:
    if args.report:
        fields = {
            "command": args.command_line,
            "energy": float(result.energy),
            "lower_bound": float(result.lower_bound),
            "relative_gap": relative_gap(result.energy, result.lower_bound),
            "iterations": result.iterations,
            "wall_ms": round(result.wall_ms, 3),
            "consistent": bool(result.consistent),
        }
        fields.update(extra)
        write_report(args.report, fields)
    if args.trace:
        write_trace(args.trace, result.trace)


def cmd_segment(args) -> int:
    img = images.read_pgm(args.input)
    if args.costs:
        table = curvature.read_cost_table(args.costs)
        expected = int(args.model[0])
        if table.side != expected:
            raise InputError(f"cost file has patch side {table.side}, model {args.model} needs {expected}")
    else:
        table = curvature.model_table(args.model, args.seed)
    data = curvature.squared_data_term(img.samples, args.mu_bg, args.mu_fg)
    inst = curvature.build_segmentation_instance(data, args.lam, table)
    result = run(inst.super_graph, _solver_options(args))
    x = result.base_labeling.reshape(img.height, img.width)
    images.write_pbm(x, args.out)
    _finish(args, result, {"model": args.model, "seed": args.seed, "lambda": args.lam})
    return 0


def cmd_deconv(args) -> int:
    img = images.read_pgm(args.input)
    problem = deconv.deconvolution_problem(img.samples, args.kernel)
    result = run(problem.super_graph(), _solver_options(args))
    x = result.base_labeling.reshape(img.height, img.width)
    images.write_pbm(x, args.out)
    extra = {"model": args.kernel, "seed": args.seed, "constant": problem.constant,
             "data_cost": problem.data_cost(x)}
    if args.truth:
        truth = images.read_pgm(args.truth).samples
        if truth.shape != x.shape:
            raise InputError("truth image size differs from the input")
        extra["truth_data_cost"] = problem.data_cost(truth > 0.5)
    _finish(args, result, extra)
    return 0


def cmd_gen(args) -> int:
    if args.shape == "circle":
        img = images.circle_image(args.size, args.radius)
    else:
        img = images.blob_image(args.size, args.seed, 0.0 if args.blur else args.noise)
        if args.blur:
            img = deconv.blurred_observation(img, args.blur, args.noise, args.seed)
    if args.out.endswith(".pbm"):
        images.write_pbm(img, args.out)
    else:
        images.write_pgm(np.clip(img, 0.0, 1.0), args.out, maxval=args.maxval)
    return 0


def cmd_costs(args) -> int:
    table = curvature.model_table(args.model, args.seed, args.window_side)
    curvature.write_cost_table(table, args.out)
    print(f"{len(table)} labels written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="superpatch", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--max-iters", type=int, default=10000)
        sp.add_argument("--algorithm", choices=("trws", "lbp"), default="trws")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="binary result (PBM)")
        sp.add_argument("--report", help="key: value run report")
        sp.add_argument("--trace", help="per-iteration CSV trace")

    sp = sub.add_parser("segment", help="curvature-regularized binary segmentation")
    sp.add_argument("--input", required=True)
    sp.add_argument("--lambda", dest="lam", type=float, default=1.0)
    sp.add_argument("--model", choices=curvature.MODELS, default="2x2")
    sp.add_argument("--costs", help="cost table written by 'costs' (3x3/5x5)")
    sp.add_argument("--mu-fg", type=float, default=1.0)
    sp.add_argument("--mu-bg", type=float, default=0.0)
    solver_flags(sp)
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("deconv", help="binary deconvolution of a blurred image")
    sp.add_argument("--input", required=True)
    sp.add_argument("--kernel", choices=sorted(deconv.KERNELS), default="mean3")
    sp.add_argument("--truth", help="ground-truth image for a data-cost comparison")
    solver_flags(sp)
    sp.set_defaults(func=cmd_deconv)

    sp = sub.add_parser("gen", help="synthetic test image")
    gsub = sp.add_subparsers(dest="shape", required=True)
    c = gsub.add_parser("circle")
    c.add_argument("--size", type=int, default=81)
    c.add_argument("--radius", type=float, default=30.0)
    b = gsub.add_parser("blob")
    b.add_argument("--size", type=int, default=64)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--noise", type=float, default=0.0)
    b.add_argument("--blur", choices=sorted(deconv.KERNELS), help="blur before adding noise")
    for g in (c, b):
        g.add_argument("--out", required=True, help="PGM (or PBM if the name ends in .pbm)")
        g.add_argument("--maxval", type=int, default=255)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("costs", help="generate a patch cost table")
    sp.add_argument("--model", choices=("3x3", "5x5"), required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--window-side", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_costs)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.command_line = "superpatch " + shlex.join(argv)
    try:
        return args.func(args)
    except SuperpatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
