"""Command-line front end: generate, ingest, fit, score, curve, diagnose.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import curves, em_fit, hypergrid, synth
from .hypergrid import DataError, GridSpec


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def parse_grid(text: str) -> np.ndarray:
    """``lo:hi:count:spacing`` with spacing in {linear, log}."""
    parts = text.split(":")
    if len(parts) == 3:
        parts.append("linear")
    if len(parts) != 4:
        raise UsageError(f"bad grid {text!r}; expected lo:hi:count:spacing")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"bad grid {text!r}") from None
    if count < 1 or (count > 1 and hi <= lo):
        raise UsageError(f"bad grid {text!r}; need count >= 1 and hi > lo")
    if parts[3] == "linear":
        return np.linspace(lo, hi, count)
    if parts[3] == "log":
        if lo <= 0:
            raise UsageError("log spacing needs lo > 0")
        return np.geomspace(lo, hi, count)
    raise UsageError(f"unknown spacing {parts[3]!r}")


def parse_region(text: str, d: int):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"bad region {text!r}; expected lo:hi") from None
    if hi <= lo:
        raise UsageError("region needs hi > lo")
    return np.full(d, lo), np.full(d, hi)


def load_oracle(name: str | None):
    if name is None:
        raise UsageError("this command needs --oracle (heavy-tail or a piecewise density JSON file)")
    if name == "heavy-tail":
        return synth.HeavyTail2D()
    path = Path(name)
    if not path.exists():
        raise UsageError(f"unknown oracle {name!r}")
    try:
        return synth.PiecewiseConstantDensity.load(path)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _echo_config(out: Path, args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    cfg["timestamp"] = datetime.now(timezone.utc).isoformat()
    out.with_name(out.name + ".config.json").write_text(json.dumps(cfg, indent=1, default=str) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n")


def cmd_generate(args) -> None:
    if args.n is not None and args.n < 1:
        raise UsageError("-n must be >= 1")
    if args.family == "heavy-tail":
        pts = synth.sample_heavy_tail(args.n or 1000, args.seed)
        meta = synth.HeavyTail2D().metadata()
    elif args.family == "piecewise":
        if not args.density:
            raise UsageError("--density is required for the piecewise family")
        dens = load_oracle(args.density)
        pts = synth.sample_piecewise(dens, args.n or 1000, args.seed)
        meta = dens.metadata()
    else:
        pts = synth.TOY.points()
        meta = {"family": "toy", "names": list(synth.TOY.names), "counts": list(synth.TOY.counts), **synth.TOY.partition.to_dict()}
    hypergrid.write_points_csv(args.output, pts)
    _write_json(Path(str(args.output) + ".oracle.json"), meta)


def _partition(args, d: int):
    if args.partition == "toy":
        return synth.TOY.partition
    if args.grid_side is None or args.grid_side <= 0:
        raise UsageError("--grid-side must be given and positive")
    return GridSpec(d, args.grid_side)


def cmd_ingest(args) -> None:
    pts = hypergrid.read_points_csv(args.input)
    if len(pts) == 0:
        raise DataError("no points in input")
    hist = hypergrid.ingest(_partition(args, pts.shape[1]), pts)
    hypergrid.save_histogram(args.output, hist)


def cmd_fit(args) -> None:
    pts = hypergrid.read_points_csv(args.input)
    if len(pts) == 0:
        raise DataError("no points in input")
    hist = hypergrid.ingest(_partition(args, pts.shape[1]), pts)
    t1 = args.t1 if args.t1 is not None else em_fit.choose_t1(hist)
    if t1 <= 0:
        raise UsageError("--t1 must be positive")
    if args.depth is not None:
        if args.depth < 1:
            raise UsageError("--depth must be >= 1")
        N = args.depth
    else:
        t_min = args.t_min if args.t_min is not None else float(hist.ratios.min())
        N = em_fit.depth_to_floor(t1, hist.n, t_min)
    model = em_fit.fit(hist, em_fit.geometric_schedule(t1, hist.n, N))
    em_fit.save_model(args.output, model)
    sizes = np.bincount(model.entry, minlength=N).cumsum()
    print(f"t1={t1!r} N={N} n={hist.n} cells={len(hist)}")
    print("cluster sizes:", " ".join(str(int(s)) for s in sizes[:20]) + (" ..." if N > 20 else ""))


def cmd_score(args) -> None:
    model = em_fit.load_model(args.model)
    pts = hypergrid.read_points_csv(args.input, model.spec.d)
    s = em_fit.score_points(model, pts)
    order = np.argsort(s, kind="stable")
    position = np.empty(len(s), dtype=np.int64)
    position[order] = np.arange(len(s))
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(pts.shape[1])] + ["score", "rank"])
        for x, v, r in zip(pts, s, position):
            w.writerow([repr(float(c)) for c in x] + [repr(float(v)), int(r)])


def cmd_curve(args) -> None:
    grid = parse_grid(args.grid)
    if args.kind in ("em-empirical", "mv-empirical"):
        if not args.model or not args.eval_input:
            raise UsageError(f"{args.kind} needs --model and --eval-input")
        if args.kind == "mv-empirical" and np.any((grid <= 0) | (grid > 1)):
            raise UsageError("alpha grid must lie in (0, 1]")
        model = em_fit.load_model(args.model)
        ev = hypergrid.read_points_csv(args.eval_input, model.spec.d)
        if args.kind == "em-empirical":
            curve = curves.empirical_em_curve(model, ev, grid)
        else:
            curve = curves.empirical_mv_curve(model, ev, grid)
    else:
        oracle = load_oracle(args.oracle)
        if np.any(grid <= 0):
            raise UsageError("t grid must be positive")
        if args.kind == "em-oracle":
            curve = curves.oracle_em_curve(oracle, grid)
        else:
            if args.grid_side is None:
                raise UsageError("em-class needs --grid-side")
            spec = GridSpec(oracle.d, args.grid_side)
            proj = curves.project_density(oracle, spec, parse_region(args.region, oracle.d), args.quad_order)
            curve = curves.CurveSamples("t", grid, curves.em_star_class(proj.masses, spec.cell_volume, grid))
    curve.write_csv(args.output)


def cmd_diagnose(args) -> None:
    if not 0 < args.delta < 1:
        raise UsageError("--delta must lie in (0, 1)")
    model = em_fit.load_model(args.model)
    pts = hypergrid.read_points_csv(args.input, model.spec.d)
    if len(pts) == 0:
        raise DataError("no points in input")
    n = len(pts)
    if args.rn is not None:
        R_n, method = args.rn, "given"
    else:
        if args.mc_samples < 1:
            raise UsageError("--mc-samples must be >= 1")
        R_n = curves.empirical_rademacher(model.spec.cells_of(pts), args.mc_samples, args.seed)
        method = f"monte-carlo, {args.mc_samples} rounds"
    report = {
        "n": n,
        "R_n": {"value": R_n, "method": method, "seed": args.seed},
        "delta": args.delta,
        "Phi_n": curves.penalty(R_n, n, args.delta),
        "bias": None,
        "levels": None,
    }
    if args.oracle:
        oracle = load_oracle(args.oracle)
        if not isinstance(model.spec, GridSpec):
            raise UsageError("oracle diagnostics need a grid model")
        b = curves.bias_l1(oracle, model.spec, parse_region(args.region, oracle.d), args.quad_order)
        report["bias"] = {**b.to_dict(), "seed": None}
        t = model.levels
        em_model = curves.model_em_curve(model, oracle, t).value
        em_star = np.array([curves.oracle_em_star(oracle, v) for v in t])
        report["levels"] = [
            {"t": float(a), "em_star": float(b_), "em_model": float(c), "gap": float(b_ - c)}
            for a, b_, c in zip(t, em_star, em_model)
        ]
    _write_json(Path(args.output), report)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="emscore", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic sample as CSV")
    g.add_argument("family", choices=["heavy-tail", "piecewise", "toy"])
    g.add_argument("-n", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--density", help="piecewise density JSON")
    g.add_argument("--output", required=True, type=Path)
    g.set_defaults(func=cmd_generate)

    def partition_flags(sp):
        sp.add_argument("--grid-side", type=float, help="hypercube side length l")
        sp.add_argument("--partition", choices=["grid", "toy"], default="grid")

    i = sub.add_parser("ingest", help="export the sparse histogram of a sample")
    i.add_argument("--input", required=True, type=Path)
    partition_flags(i)
    i.add_argument("--output", required=True, type=Path)
    i.set_defaults(func=cmd_ingest)

    f = sub.add_parser("fit", help="learn nested clusters and save the model")
    f.add_argument("--input", required=True, type=Path)
    partition_flags(f)
    f.add_argument("--depth", type=int, help="number of levels N")
    f.add_argument("--t-min", type=float, help="stop once t_N <= t_min (default: smallest cell ratio)")
    f.add_argument("--t1", type=float, help="override the top level")
    f.add_argument("--output", required=True, type=Path)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("score", help="score and rank points with a saved model")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--input", required=True, type=Path)
    s.add_argument("--output", required=True, type=Path)
    s.set_defaults(func=cmd_score)

    c = sub.add_parser("curve", help="EM / MV curves as abscissa,value CSV")
    c.add_argument("kind", choices=["em-empirical", "em-oracle", "em-class", "mv-empirical"])
    c.add_argument("--grid", required=True, help="lo:hi:count:spacing")
    c.add_argument("--model", type=Path)
    c.add_argument("--eval-input", type=Path)
    c.add_argument("--oracle")
    c.add_argument("--grid-side", type=float)
    c.add_argument("--region", default="-50:50")
    c.add_argument("--quad-order", type=int, default=8)
    c.add_argument("--output", required=True, type=Path)
    c.set_defaults(func=cmd_curve)

    d = sub.add_parser("diagnose", help="Rademacher penalty, bias and per-level EM gaps")
    d.add_argument("--input", required=True, type=Path, help="training points")
    d.add_argument("--model", required=True, type=Path)
    d.add_argument("--delta", type=float, default=0.05)
    d.add_argument("--mc-samples", type=int, default=200, help="Rademacher rounds M")
    d.add_argument("--rn", type=float, help="use this Rademacher average instead of estimating it")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--oracle")
    d.add_argument("--region", default="-50:50")
    d.add_argument("--quad-order", type=int, default=8)
    d.add_argument("--output", required=True, type=Path)
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (DataError, FileNotFoundError) as exc:
        print(f"emscore: data error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError) as exc:
        print(f"emscore: error: {exc}", file=sys.stderr)
        return 1
    _echo_config(Path(args.output), args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
