"""EM curves on the heavy-tailed 2-d sample for several grid sides.

Writes one CSV per grid side with the mean held-out EM curve, plus the
oracle curve EM* and the class-optimal curves EM*_F.  With --plot a PNG is
drawn as well (needs matplotlib).

    python3 scripts/reproduce_figures.py --out results/figures
"""
from __future__ import annotations

import argparse
import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from emscore import (
    GridSpec,
    HeavyTail2D,
    choose_t1,
    depth_to_floor,
    em_star_class,
    empirical_em_curve,
    fit,
    geometric_schedule,
    ingest,
    oracle_em_star,
    project_density,
    sample_heavy_tail,
)


@dataclass
class FigureConfig:
    n_train: int = 20_000
    n_eval: int = 100_000
    seeds: int = 10
    sides: tuple = (1.0, 0.5, 0.2)
    t_lo: float = 0.005
    t_hi: float = 0.5
    t_count: int = 100
    region: float = 50.0
    out: Path = field(default_factory=lambda: Path("results/figures"))


def run(cfg: FigureConfig) -> dict:
    oracle = HeavyTail2D()
    t = np.linspace(cfg.t_lo, cfg.t_hi, cfg.t_count)
    columns = {"t": t, "em_star": np.array([oracle_em_star(oracle, v) for v in t])}
    region = ([-cfg.region] * 2, [cfg.region] * 2)
    for l in cfg.sides:
        spec = GridSpec(2, l)
        runs = []
        for seed in range(cfg.seeds):
            h = ingest(spec, sample_heavy_tail(cfg.n_train, seed))
            t1 = choose_t1(h)
            model = fit(h, geometric_schedule(t1, h.n, depth_to_floor(t1, h.n, float(h.ratios.min()))))
            runs.append(empirical_em_curve(model, sample_heavy_tail(cfg.n_eval, 10_000 + seed), t).value)
        columns[f"em_l{l:g}"] = np.mean(runs, axis=0)
        proj = project_density(oracle, spec, region)
        columns[f"em_class_l{l:g}"] = em_star_class(proj.masses, spec.cell_volume, t)
    return columns


def write(cfg: FigureConfig, columns: dict) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "em_curves.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns))
        for row in zip(*columns.values()):
            w.writerow([repr(float(v)) for v in row])
    (cfg.out / "config.json").write_text(json.dumps(asdict(cfg), indent=1, default=str) + "\n")
    return path


def plot(cfg: FigureConfig, columns: dict) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    t = columns["t"]
    ax.plot(t, columns["em_star"], "k-", label="EM* (oracle)")
    for l in cfg.sides:
        line, = ax.plot(t, columns[f"em_l{l:g}"], label=f"held-out EM, l={l:g}")
        ax.plot(t, columns[f"em_class_l{l:g}"], "--", color=line.get_color(), alpha=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel("excess mass")
    ax.legend()
    path = cfg.out / "em_curves.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    return path


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=FigureConfig().out)
    p.add_argument("--seeds", type=int, default=FigureConfig.seeds)
    p.add_argument("--n-train", type=int, default=FigureConfig.n_train)
    p.add_argument("--plot", action="store_true")
    a = p.parse_args()
    cfg = FigureConfig(n_train=a.n_train, seeds=a.seeds, out=a.out)
    columns = run(cfg)
    print(write(cfg, columns))
    if a.plot:
        print(plot(cfg, columns))


if __name__ == "__main__":
    main()
