"""Nested EM clusters versus non-nested minimum-volume sets on the three-rectangle toy.

    python3 scripts/toy_pathology.py
"""
from __future__ import annotations

from dataclasses import dataclass

from emscore import ThresholdSchedule, fit, min_volume_set, toy_fixture


@dataclass
class ToyConfig:
    levels: tuple = (0.5, 0.3, 0.2, 0.06)
    alphas: tuple = (0.5, 0.55, 0.95, 1.0)


def main(cfg: ToyConfig = ToyConfig()) -> None:
    hist, meta = toy_fixture()
    names = {m["cell"]: name for name, m in meta.items()}
    label = lambda cells: "{" + ", ".join(sorted(names[c] for c in cells)) + "}"

    model = fit(hist, ThresholdSchedule(cfg.levels))
    print("EM clusters")
    for t, cl in zip(model.levels, model.clusters):
        print(f"  t={t:<5g} {label(cl)}")
    print("MV sets")
    previous = None
    for a in cfg.alphas:
        s = min_volume_set(hist, a)
        vol = sum(meta[names[c]]["volume"] for c in s)
        note = "" if previous is None or previous <= s else "  <- not a superset of the previous set"
        print(f"  alpha={a:<5g} {label(s)} volume={vol:g}{note}")
        previous = s


if __name__ == "__main__":
    main()
