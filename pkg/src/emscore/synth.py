"""Synthetic densities with exact level-set functionals, and their samplers."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

from .hypergrid import BoxPartition, GridSpec, SparseHistogram, ingest, lookup_rows


class HeavyTail2D:
    """f(x, y) = 1/2 (1+|x|)^-3 (1+|y|)^-2 on R^2.

    The density factorises as p(x) q(y) with p(x) = (1+|x|)^-3 and
    q(y) = (1+|y|)^-2 / 2, so |X| has cdf 1-(1+u)^-2 and |Y| has cdf 1-(1+v)^-1.

    With u = 1+|x|, v = 1+|y| the level set {f >= t} is
    {v <= (2t)^(-1/2) u^(-3/2)}, nonempty in u up to U = (2t)^(-1/3).
    Integrating over the four quadrants:

        lambda(t) = 4 [2 (2t)^(-1/2) - 3 (2t)^(-1/3) + 1]
        alpha(t)  = 1 + 3 (2t)^(2/3) - 4 (2t)^(1/2)

    for 0 < t <= 1/2, both zero above.
    """

    d = 2
    sup_norm = 0.5
    name = "heavy-tail"

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * (1 + np.abs(x[..., 0])) ** -3 * (1 + np.abs(x[..., 1])) ** -2

    def level_volume(self, t):
        t = np.asarray(t, dtype=np.float64)
        s = 2 * np.minimum(t, 0.5)
        with np.errstate(divide="ignore"):
            lam = 4 * (2 * s**-0.5 - 3 * s ** (-1 / 3) + 1)
        return np.where(t < 0.5, np.maximum(lam, 0.0), 0.0)[()]

    def level_mass(self, t) -> float:
        """alpha(t) = P(f(X) >= t), by quadrature in u of the closed-form v-integral."""
        t = float(t)
        if t >= 0.5:
            return 0.0
        if t <= 0:
            return 1.0
        c = math.sqrt(2 * t)
        upper = (2 * t) ** (-1 / 3)
        # 4 quadrants * (1/2) u^-3 * int_1^{V(u)} v^-2 dv, with 1/V(u) = c u^{3/2}
        val, _ = integrate.quad(lambda u: 2 * u**-3 * (1 - c * u**1.5), 1.0, upper, epsabs=1e-14, epsrel=1e-13, limit=200)
        return val

    @staticmethod
    def level_mass_closed_form(t) -> float:
        t = float(t)
        if t >= 0.5:
            return 0.0
        s = 2 * t
        return 1 + 3 * s ** (2 / 3) - 4 * s**0.5

    def em_star(self, t) -> float:
        return max(self.level_mass(t) - float(t) * float(self.level_volume(t)), 0.0)

    @staticmethod
    def _cdf_x(x):
        x = np.asarray(x, dtype=np.float64)
        tail = 0.5 * (1 + np.abs(x)) ** -2
        return np.where(x >= 0, 1 - tail, tail)

    @staticmethod
    def _cdf_y(y):
        y = np.asarray(y, dtype=np.float64)
        tail = 0.5 / (1 + np.abs(y))
        return np.where(y >= 0, 1 - tail, tail)

    def box_mass(self, lo, hi) -> np.ndarray:
        """Exact P(X in box) for boxes given as (..., 2) corner arrays."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        mx = self._cdf_x(hi[..., 0]) - self._cdf_x(lo[..., 0])
        my = self._cdf_y(hi[..., 1]) - self._cdf_y(lo[..., 1])
        return mx * my

    def cell_masses(self, spec: GridSpec, index) -> np.ndarray:
        lo, hi = spec.cell_bounds(index)
        return self.box_mass(lo, hi)

    def sample(self, n: int, seed) -> np.ndarray:
        return sample_heavy_tail(n, seed)

    def metadata(self) -> dict:
        return {
            "family": self.name,
            "density": "0.5 * (1+|x|)^-3 * (1+|y|)^-2",
            "sup_norm": self.sup_norm,
            "abs_x_cdf": "1 - (1+u)^-2",
            "abs_y_cdf": "1 - (1+v)^-1",
        }


def box_mass(L: float) -> float:
    """P(X in [-L, L]^2) under the heavy-tailed density."""
    return (1 - (1 + L) ** -2) * (1 - 1 / (1 + L))


def sample_heavy_tail(n: int, seed) -> np.ndarray:
    """Inverse-cdf draws: |X| = U^-1/2 - 1, |Y| = V^-1 - 1, independent random signs."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    u = 1.0 - rng.random(n)  # (0, 1]
    v = 1.0 - rng.random(n)
    sx = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    sy = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return np.column_stack([sx * (u**-0.5 - 1), sy * (1 / v - 1)])


@dataclass(frozen=True)
class PiecewiseConstantDensity:
    """Density constant on the cells of a grid, zero elsewhere."""

    spec: GridSpec
    index: np.ndarray
    values: np.ndarray
    name = "piecewise"

    def __post_init__(self):
        index = np.asarray(self.index, dtype=np.int64).reshape(-1, self.spec.d)
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if len(index) != len(values) or len(values) == 0:
            raise ValueError("need one value per cell")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("values must be finite and >= 0")
        if len(np.unique(index, axis=0)) != len(index):
            raise ValueError("duplicate cells")
        total = float(values.sum() * self.spec.cell_volume)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"density integrates to {total!r}, not 1")
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def sup_norm(self) -> float:
        return float(self.values.max())

    @property
    def masses(self) -> np.ndarray:
        return self.values * self.spec.cell_volume

    @classmethod
    def random(cls, spec: GridSpec, shape, seed, floor: float = 0.2) -> "PiecewiseConstantDensity":
        """Random all-distinct cell values on a box of cells of the given shape."""
        rng = np.random.default_rng(seed)
        grids = np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")
        index = np.column_stack([g.ravel() for g in grids])
        raw = floor + rng.random(len(index))
        return cls.from_weights(spec, index, raw)

    @classmethod
    def from_weights(cls, spec: GridSpec, index, weights) -> "PiecewiseConstantDensity":
        w = np.asarray(weights, dtype=np.float64)
        values = w / (w.sum() * spec.cell_volume)
        # absorb the rounding residue into the largest cell
        resid = 1.0 - values.sum() * spec.cell_volume
        values[np.argmax(values)] += resid / spec.cell_volume
        return cls(spec, index, values)

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(-1, self.d)
        rows = lookup_rows(self.index, self.spec.cells_of(flat))
        out = np.where(rows >= 0, self.values[np.maximum(rows, 0)], 0.0)
        return out.reshape(x.shape[:-1])

    def level_volume(self, t) -> float:
        return float(np.count_nonzero(self.values >= t) * self.spec.cell_volume)

    def level_mass(self, t) -> float:
        return float(self.masses[self.values >= t].sum())

    def em_star(self, t) -> float:
        return float(np.maximum(self.values - t, 0.0).sum() * self.spec.cell_volume)

    def cell_masses(self, spec: GridSpec, index) -> np.ndarray:
        if spec != self.spec:
            raise NotImplementedError("exact cell masses only on the density's own grid")
        rows = lookup_rows(self.index, index)
        return np.where(rows >= 0, self.masses[np.maximum(rows, 0)], 0.0)

    def sample(self, n: int, seed) -> np.ndarray:
        return sample_piecewise(self, n, seed)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "cells": [{"index": [int(v) for v in i], "value": float(v)} for i, v in zip(self.index, self.values)],
        }

    def metadata(self) -> dict:
        return {"family": self.name, "sup_norm": self.sup_norm, **self.to_dict()}

    @classmethod
    def from_dict(cls, obj: dict) -> "PiecewiseConstantDensity":
        s = obj["spec"]
        spec = GridSpec(int(s["d"]), float(s["l"]), tuple(s.get("origin") or [0.0] * int(s["d"])))
        return cls(spec, [c["index"] for c in obj["cells"]], [c["value"] for c in obj["cells"]])

    @classmethod
    def load(cls, path) -> "PiecewiseConstantDensity":
        return cls.from_dict(json.loads(Path(path).read_text()))


def sample_piecewise(density: PiecewiseConstantDensity, n: int, seed) -> np.ndarray:
    """Pick cells with probability value * l^d, then a uniform point inside."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = density.masses
    if abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("density is not normalized")
    rng = np.random.default_rng(seed)
    rows = rng.choice(len(p), size=n, p=p / p.sum())
    lo, _ = density.spec.cell_bounds(density.index[rows])
    return lo + density.spec.l * rng.random((n, density.d))


@dataclass(frozen=True)
class RectangleMixture:
    """Disjoint boxes, each with a share of the points."""

    partition: BoxPartition
    counts: tuple
    names: tuple = ()

    @property
    def weights(self) -> np.ndarray:
        c = np.asarray(self.counts, dtype=np.float64)
        return c / c.sum()

    @property
    def volumes(self) -> np.ndarray:
        return self.partition.cell_volumes(np.arange(len(self.counts)).reshape(-1, 1))

    def points(self) -> np.ndarray:
        """Deterministic placement: counts[k] points along the diagonal of box k."""
        out = []
        for lo, hi, c in zip(self.partition.lo, self.partition.hi, self.counts):
            lo, hi = np.asarray(lo), np.asarray(hi)
            frac = (np.arange(c) + 0.5) / c
            out.append(lo + frac[:, None] * (hi - lo))
        return np.vstack(out)

    def sample(self, n: int, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        k = rng.choice(len(self.counts), size=n, p=self.weights)
        lo = np.asarray(self.partition.lo)[k]
        hi = np.asarray(self.partition.hi)[k]
        return lo + (hi - lo) * rng.random((n, self.partition.d))


# A1 dense, A2 large, A3 small; volumes 1, 2, 0.5 and 10/9/1 of the 20 points.
TOY = RectangleMixture(
    BoxPartition(lo=[(1.0, 0.0), (-1.0, 0.0), (1.0, 1.0)], hi=[(2.0, 1.0), (1.0, 1.0), (2.0, 1.5)]),
    counts=(10, 9, 1),
    names=("A1", "A2", "A3"),
)


def toy_fixture() -> tuple[SparseHistogram, dict]:
    """Histogram of the 20-point, three-rectangle example and its cell metadata."""
    hist = ingest(TOY.partition, TOY.points())
    meta = {
        name: {"cell": (k,), "count": int(c), "volume": float(v)}
        for k, (name, c, v) in enumerate(zip(TOY.names, TOY.counts, TOY.volumes))
    }
    return hist, meta
