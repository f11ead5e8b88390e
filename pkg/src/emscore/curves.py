"""Excess-mass and mass-volume curves, complexity penalty and bias diagnostics."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .em_fit import NestedClusterModel
from .hypergrid import DataError, GridSpec, SparseHistogram


class DensityOracle(Protocol):
    """Ground-truth density with exact level-set functionals."""

    d: int
    sup_norm: float

    def pdf(self, x) -> np.ndarray: ...
    def level_volume(self, t) -> float: ...
    def level_mass(self, t) -> float: ...
    def sample(self, n: int, seed) -> np.ndarray: ...


@dataclass(frozen=True)
class CurveSamples:
    axis: str  # "t" or "alpha"
    abscissa: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.abscissa, dtype=np.float64)
        y = np.asarray(self.value, dtype=np.float64)
        if self.axis not in ("t", "alpha"):
            raise ValueError(f"unknown axis {self.axis!r}")
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("abscissa and value must be 1-d and the same length")
        dx = np.diff(x)
        if len(dx) and not (np.all(dx > 0) or np.all(dx < 0)):
            raise ValueError("abscissas must be strictly monotone")
        object.__setattr__(self, "abscissa", x)
        object.__setattr__(self, "value", y)

    def __iter__(self):
        return iter(zip(self.abscissa.tolist(), self.value.tolist()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["abscissa", "value"])
            for x, y in self:
                w.writerow([repr(x), repr(y)])


def _threads() -> int:
    env = os.environ.get("EM_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _grid(t_grid) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t_grid, dtype=np.float64))
    if t.ndim != 1:
        raise ValueError("grid must be 1-d")
    return t


def em_from_level_sets(masses, volumes, t_grid) -> np.ndarray:
    """max(0, max_k masses[k] - t * volumes[k]) for every t; the 0 is the empty set."""
    t = _grid(t_grid)
    m = np.asarray(masses, dtype=np.float64)
    v = np.asarray(volumes, dtype=np.float64)
    out = np.zeros(len(t))
    for lo in range(0, len(t), 256):
        block = m[None, :] - t[lo:lo + 256, None] * v[None, :]
        out[lo:lo + 256] = np.maximum(block.max(axis=1, initial=0.0), 0.0)
    return out


def eval_level_masses(model: NestedClusterModel, eval_points) -> np.ndarray:
    """Fraction of ``eval_points`` inside each nested cluster."""
    x = np.asarray(eval_points, dtype=np.float64)
    if x.size == 0:
        raise DataError("empty evaluation sample")
    lvl = model.level_of_points(x)
    N = len(model.schedule)
    return np.cumsum(np.bincount(lvl[lvl >= 0], minlength=N)[:N]) / len(lvl)


def empirical_em_curve(model: NestedClusterModel, eval_points, t_grid) -> CurveSamples:
    """EM curve of the fitted score with masses estimated on ``eval_points``.

    Level-set volumes are exact (cells times cell volume).
    """
    masses = eval_level_masses(model, eval_points)
    t = _grid(t_grid)
    return CurveSamples("t", t, em_from_level_sets(masses, model.volumes, t))


def oracle_cluster_masses(model: NestedClusterModel, oracle) -> np.ndarray:
    """True probability of every nested cluster (requires ``oracle.cell_masses``)."""
    N = len(model.schedule)
    if len(model.index) == 0:
        return np.zeros(N)
    cell = oracle.cell_masses(model.spec, model.index)
    return np.cumsum(np.bincount(model.entry, weights=cell, minlength=N)[:N])


def model_em_curve(model: NestedClusterModel, oracle, t_grid) -> CurveSamples:
    """EM curve of the fitted score under the true distribution."""
    t = _grid(t_grid)
    return CurveSamples("t", t, em_from_level_sets(oracle_cluster_masses(model, oracle), model.volumes, t))


def mc_volume(s: Callable, u: float, lo, hi, m: int, seed) -> float:
    """Monte-Carlo volume of {s >= u} inside the box [lo, hi]."""
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise ValueError("degenerate box")
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    x = lo + (hi - lo) * rng.random((m, len(lo)))
    hits = np.asarray(s(x)) >= u
    return float(np.prod(hi - lo) * np.count_nonzero(hits) / m)


def oracle_em_star(oracle, t) -> float:
    """EM*(t) = alpha(t) - t lambda(t), clipped at 0 and zero above sup f."""
    t = float(t)
    if not t > 0:
        raise ValueError("t must be positive")
    if t >= oracle.sup_norm:
        return 0.0
    return max(float(oracle.level_mass(t)) - t * float(oracle.level_volume(t)), 0.0)


def oracle_em_curve(oracle, t_grid) -> CurveSamples:
    t = _grid(t_grid)
    return CurveSamples("t", t, np.array([oracle_em_star(oracle, v) for v in t]))


def _check_alpha(alpha) -> np.ndarray:
    a = _grid(alpha)
    if np.any((a <= 0) | (a > 1)):
        raise ValueError("alpha must lie in (0, 1]")
    return a


def empirical_mv_curve(
    s, eval_points, alpha_grid, *, box=None, m: int = 100_000, seed=0
) -> CurveSamples:
    """Volume of the smallest level set of ``s`` holding empirical mass >= alpha.

    ``s`` is either a fitted model (exact volumes) or a vectorised callable, in
    which case the level-set volume is estimated by Monte Carlo inside ``box``.
    Returns inf when no level set above 0 reaches the mass.
    """
    a = _check_alpha(alpha_grid)
    x = np.asarray(eval_points, dtype=np.float64)
    if x.size == 0:
        raise DataError("empty evaluation sample")
    if isinstance(s, NestedClusterModel):
        masses = eval_level_masses(s, x)
        vols = s.volumes
        out = []
        for al in a:
            k = np.flatnonzero(masses >= al - 1e-12)
            out.append(float(vols[k[0]]) if len(k) else math.inf)
        return CurveSamples("alpha", a, np.array(out))
    if box is None:
        raise ValueError("a box is required to estimate volumes of a callable score")
    scores = np.sort(np.asarray(s(x), dtype=np.float64))[::-1]
    out = []
    for al in a:
        need = max(int(math.ceil(al * len(scores) - 1e-9)), 1)
        u = scores[need - 1]
        out.append(mc_volume(s, u, box[0], box[1], m, seed) if u > 0 else math.inf)
    return CurveSamples("alpha", a, np.array(out))


def _required_count(target: float, n: int) -> int:
    c = math.ceil(target * n)
    if c > 0 and (c - 1) / n >= target - 1e-12:
        c -= 1
    return max(c, 0)


def min_volume_set(hist: SparseHistogram, alpha: float, phi: float = 0.0) -> set:
    """Smallest-volume union of cells with empirical mass >= alpha - phi.

    With equal cell volumes the cells are taken by decreasing count (ties by
    lexicographic index), which is optimal.  With unequal volumes the problem
    is a 0/1 knapsack over integer counts and is solved exactly by dynamic
    programming.
    """
    if hist.n <= 0:
        raise DataError("no data")
    if not 0 < alpha <= 1 or phi < 0:
        raise ValueError("need 0 < alpha <= 1 and phi >= 0")
    target = alpha - phi
    if target > 1 + 1e-12:
        raise ValueError("infeasible: alpha - phi > 1")
    need = _required_count(target, hist.n)
    if need == 0:
        return set()
    vols = hist.volumes
    cells = [tuple(map(int, i)) for i in hist.index]
    if np.all(vols == vols[0]):
        # np.lexsort: last key is primary
        order = np.lexsort(tuple(hist.index.T[::-1]) + (-hist.count,))
        taken = np.cumsum(hist.count[order])
        stop = int(np.searchsorted(taken, need)) + 1
        return {cells[j] for j in order[:stop]}
    return _knapsack_min_volume(cells, hist.count, vols, need)


def _knapsack_min_volume(cells, counts, vols, need: int) -> set:
    m = len(cells)
    best = np.full(need + 1, np.inf)
    best[0] = 0.0
    take = np.zeros((m, need + 1), dtype=bool)
    for j in range(m):
        c, v = int(counts[j]), float(vols[j])
        src = np.maximum(np.arange(need + 1) - c, 0)
        cand = best[src] + v
        better = cand < best
        take[j] = better
        best = np.where(better, cand, best)
    chosen, r = set(), need
    for j in range(m - 1, -1, -1):
        if r > 0 and take[j, r]:
            chosen.add(cells[j])
            r = max(r - int(counts[j]), 0)
    return chosen


def empirical_rademacher(cell_ids, M: int = 200, seed=0) -> float:
    """Monte-Carlo Rademacher average of the partition sigma-algebra.

    For signs eps, sup over unions of cells of |sum_i eps_i 1{X_i in Omega}| / n
    is max(sum_C (S_C)^+, sum_C (S_C)^-) / n with S_C the signed sum in cell C.
    Round r uses generator seed + r.
    """
    ids = np.asarray(cell_ids)
    if ids.ndim == 2:
        ids = np.unique(ids, axis=0, return_inverse=True)[1].ravel()
    ids = ids.astype(np.int64)
    n = len(ids)
    if n < 1 or M < 1:
        raise ValueError("need n >= 1 and M >= 1")
    k = int(ids.max()) + 1
    total = 0.0
    for r in range(M):
        eps = np.random.default_rng(seed + r).integers(0, 2, n) * 2 - 1
        S = np.bincount(ids, weights=eps, minlength=k)
        total += max(S[S > 0].sum(), -S[S < 0].sum()) / n
    return total / M


def penalty(R_n: float, n: int, delta: float) -> float:
    """Phi_n(delta) = 2 R_n + sqrt(log(1/delta) / (2n))."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if n < 1 or R_n < 0:
        raise ValueError("need n >= 1 and R_n >= 0")
    return 2 * R_n + math.sqrt(math.log(1 / delta) / (2 * n))


@dataclass(frozen=True)
class CellField:
    """Per-cell values on a grid: ``values[j]`` belongs to cell ``index[j]``."""

    spec: GridSpec
    index: np.ndarray
    values: np.ndarray

    @property
    def masses(self) -> np.ndarray:
        return self.values * self.spec.cell_volume


def region_cells(spec: GridSpec, lo, hi) -> np.ndarray:
    """All cells meeting the box [lo, hi]."""
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (spec.d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (spec.d,))
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(hi <= lo):
        raise ValueError("region must be a finite nondegenerate box")
    o = np.asarray(spec.origin)
    a = np.floor((lo - o) / spec.l).astype(np.int64)
    b = np.ceil((hi - o) / spec.l).astype(np.int64)
    axes = [np.arange(a[j], b[j]) for j in range(spec.d)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def _gauss(spec: GridSpec, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    u = (x + 1) / 2  # nodes on [0, 1]
    w = w / 2  # weights summing to 1
    mesh = np.meshgrid(*([u] * spec.d), indexing="ij")
    nodes = np.column_stack([g.ravel() for g in mesh]) * spec.l
    wm = np.meshgrid(*([w] * spec.d), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wm]), axis=0)
    return nodes, weights


def _per_cell(oracle, spec: GridSpec, index: np.ndarray, order: int, fn) -> np.ndarray:
    nodes, weights = _gauss(spec, order)
    chunk = max(1, 2_000_000 // len(weights))

    def work(start):
        idx = index[start:start + chunk]
        lo, _ = spec.cell_bounds(idx)
        vals = oracle.pdf(lo[:, None, :] + nodes[None, :, :])
        return fn(vals, weights)

    starts = range(0, len(index), chunk)
    with ThreadPoolExecutor(_threads()) as ex:
        parts = list(ex.map(work, starts))
    return np.concatenate(parts) if parts else np.empty(0)


def project_density(oracle, spec: GridSpec, region, order: int = 8) -> CellField:
    """Cell averages of the density (its L1-best grid approximation) over ``region``.

    Tensor Gauss-Legendre rule with ``order`` nodes per axis in each cell.
    """
    index = region_cells(spec, *region)
    means = _per_cell(oracle, spec, index, order, lambda v, w: v @ w)
    return CellField(spec, index, means)


def em_star_class(masses, cell_volume: float, t) -> np.ndarray | float:
    """Best excess mass over unions of cells: sum_C (mass_C - t vol)^+."""
    m = np.asarray(masses, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    out = np.array([np.maximum(m - tv * cell_volume, 0.0).sum() for tv in np.atleast_1d(t)])
    return float(out[0]) if t.ndim == 0 else out


@dataclass(frozen=True)
class BiasReport:
    value: float  # upper estimate of ||f - f_F||_L1 over R^d
    inside: float  # quadrature estimate over the region cells
    tail: float  # oracle mass outside the region cells
    method: str
    tolerance: float

    def to_dict(self) -> dict:
        return {"value": self.value, "inside": self.inside, "tail": self.tail, "method": self.method, "tolerance": self.tolerance}


def bias_l1(oracle, spec: GridSpec, region, order: int = 8) -> BiasReport:
    """||f - f_F||_L1 by per-cell quadrature, plus 2x the mass outside the region.

    Outside the region f_F is taken as 0 there, so the tail contributes at most
    twice its mass to the L1 distance.
    """
    index = region_cells(spec, *region)

    def l1(vals, w):
        mean = vals @ w
        return np.abs(vals - mean[:, None]) @ w

    inside = float(_per_cell(oracle, spec, index, order, l1).sum() * spec.cell_volume)
    # quadrature error estimated against a lower-order rule
    coarse = float(_per_cell(oracle, spec, index, max(order - 2, 1), l1).sum() * spec.cell_volume)
    if hasattr(oracle, "cell_masses"):
        covered = float(np.sum(oracle.cell_masses(spec, index)))
    else:
        covered = float(project_density(oracle, spec, region, order).masses.sum())
    tail = max(0.0, 1.0 - covered)
    return BiasReport(inside + 2 * tail, inside, tail, f"gauss-legendre-{order}", abs(inside - coarse))
