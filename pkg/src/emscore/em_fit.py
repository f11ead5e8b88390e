"""Empirical t-clusters on partitions and the nested piecewise-constant score.

On the sigma-algebra generated by a partition the empirical excess mass
``F_n(Omega) - t * Leb(Omega)`` decomposes over cells, so the maximiser at level
``t`` is simply the set of occupied cells whose mass/volume ratio is >= t.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hypergrid import DataError, Partition, SparseHistogram, lookup_rows, partition_from_dict


@dataclass(frozen=True)
class ThresholdSchedule:
    """Strictly decreasing positive levels t_1 > ... > t_N (t_{N+1} = 0 implied)."""

    levels: tuple
    n_ref: int = 0

    def __post_init__(self):
        levels = tuple(float(t) for t in self.levels)
        if not levels:
            raise ValueError("schedule needs at least one level")
        if not all(math.isfinite(t) and t > 0 for t in levels):
            raise ValueError("levels must be finite and positive")
        if any(b >= a for a, b in zip(levels, levels[1:])):
            raise ValueError("levels must be strictly decreasing")
        object.__setattr__(self, "levels", levels)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def weights(self) -> np.ndarray:
        """a_k = t_k - t_{k+1} with t_{N+1} = 0."""
        t = np.asarray(self.levels)
        return t - np.append(t[1:], 0.0)


def geometric_schedule(t1: float, n: int, N: int) -> ThresholdSchedule:
    """Levels t_k = t1 / (1 + 1/sqrt(n))**(k-1), k = 1..N.

    This is the adaptive grid obtained with h(t) = 1/t, which is admissible
    because the level-set volume never exceeds 1/t.
    """
    if N < 1:
        raise ValueError("depth N must be >= 1")
    if not t1 > 0:
        raise ValueError("t1 must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    q = 1.0 + 1.0 / math.sqrt(n)
    return ThresholdSchedule(tuple(t1 / q**k for k in range(N)), n_ref=int(n))


def depth_to_floor(t1: float, n: int, t_min: float) -> int:
    """Smallest N whose geometric level t_N is <= t_min."""
    if not 0 < t_min:
        raise ValueError("t_min must be positive")
    if t_min >= t1:
        return 1
    q = 1.0 + 1.0 / math.sqrt(n)
    N = int(math.ceil(math.log(t1 / t_min) / math.log(q))) + 1
    while N > 1 and t1 / q ** (N - 2) <= t_min:
        N -= 1
    while t1 / q ** (N - 1) > t_min:
        N += 1
    return N


def _check_hist(hist: SparseHistogram) -> None:
    if hist.n <= 0:
        raise DataError("no data")


def _excess_mask(hist: SparseHistogram, t: float) -> np.ndarray:
    # membership via the ratio so that t = max ratio keeps the densest cell
    return hist.ratios >= t


def max_excess_cluster(hist: SparseHistogram, t: float) -> tuple[set, float]:
    """Cells maximising F_n(.) - t Leb(.) and the attained maximum.

    Zero-excess cells are included (ties go in).
    """
    _check_hist(hist)
    if not t > 0:
        raise ValueError("t must be positive")
    mask = _excess_mask(hist, t)
    excess = np.maximum(hist.masses[mask] - t * hist.volumes[mask], 0.0)
    return {tuple(map(int, i)) for i in hist.index[mask]}, float(excess.sum())


def choose_t1(hist: SparseHistogram) -> float:
    """Largest empirical density ratio; the top level of the schedule."""
    if hist.n <= 0 or len(hist) == 0:
        raise DataError("no data")
    return float(hist.ratios.max())


@dataclass(frozen=True)
class NestedClusterModel:
    """Nested empirical clusters and the score built on them.

    ``index[j]`` is a cell first selected at level ``entry[j]`` (0-based), so
    cluster k is ``{index[j] : entry[j] <= k}``.  ``masses``/``volumes`` hold the
    training mass and the exact volume of each cluster.
    """

    spec: Partition
    schedule: ThresholdSchedule
    index: np.ndarray
    entry: np.ndarray
    masses: np.ndarray
    volumes: np.ndarray

    @property
    def levels(self) -> np.ndarray:
        return np.asarray(self.schedule.levels)

    @property
    def clusters(self) -> list[set]:
        cells = [tuple(map(int, i)) for i in self.index]
        out, acc = [], set()
        for k in range(len(self.schedule)):
            acc = acc | {c for c, e in zip(cells, self.entry) if e == k}
            out.append(acc)
        return out

    def cluster_index(self, k: int) -> np.ndarray:
        return self.index[self.entry <= k]

    def level_of_cells(self, cells) -> np.ndarray:
        """Entry level of each cell, or -1 when it is in no cluster."""
        rows = lookup_rows(self.index, cells)
        out = np.full(len(rows), -1, dtype=np.int64)
        out[rows >= 0] = self.entry[rows[rows >= 0]]
        return out

    def level_of_points(self, points) -> np.ndarray:
        return self.level_of_cells(self.spec.cells_of(points, strict=False))

    def to_dict(self) -> dict:
        clusters = [[[int(v) for v in i] for i in self.index[self.entry == k]] for k in range(len(self.schedule))]
        return {
            "spec": self.spec.to_dict(),
            "schedule": {"levels": list(self.schedule.levels), "n_ref": self.schedule.n_ref},
            "clusters": clusters,
            "masses": [float(m) for m in self.masses],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "NestedClusterModel":
        spec = partition_from_dict(obj["spec"])
        sched = ThresholdSchedule(tuple(obj["schedule"]["levels"]), int(obj["schedule"].get("n_ref", 0)))
        idx, entry = [], []
        for k, new in enumerate(obj["clusters"]):
            idx.extend(new)
            entry.extend([k] * len(new))
        index = np.array(idx, dtype=np.int64).reshape(-1, spec.index_dim)
        entry = np.array(entry, dtype=np.int64)
        volumes = _cluster_volumes(spec, index, entry, len(sched))
        masses = np.asarray(obj.get("masses", [np.nan] * len(sched)), dtype=np.float64)
        return cls(spec, sched, index, entry, masses, volumes)


def _cluster_volumes(spec, index, entry, N) -> np.ndarray:
    vol = spec.cell_volumes(index) if len(index) else np.empty(0)
    return np.cumsum(np.bincount(entry, weights=vol, minlength=N)[:N])


def fit(hist: SparseHistogram, schedule: ThresholdSchedule) -> NestedClusterModel:
    """Run the level-by-level cluster search and union the results.

    For each t_k the empirical t_k-cluster is computed independently; the
    nested cluster at level k is the union of those found at levels <= k.
    """
    _check_hist(hist)
    entry = np.full(len(hist), -1, dtype=np.int64)
    for k, t in enumerate(schedule.levels):
        fresh = _excess_mask(hist, t) & (entry < 0)
        entry[fresh] = k
    keep = entry >= 0
    index, entry = hist.index[keep], entry[keep]
    N = len(schedule)
    masses = np.cumsum(np.bincount(entry, weights=hist.masses[keep], minlength=N)[:N])
    volumes = _cluster_volumes(hist.spec, index, entry, N)
    return NestedClusterModel(hist.spec, schedule, index, entry, masses, volumes)


def score_points(model: NestedClusterModel, points) -> np.ndarray:
    """s_N at every point: t_k of the first cluster containing it, else 0."""
    lvl = model.level_of_points(points)
    t = np.append(model.levels, 0.0)
    return t[np.where(lvl >= 0, lvl, len(model.levels))]


def score(model: NestedClusterModel, x) -> float:
    return float(score_points(model, np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def score_by_weights(model: NestedClusterModel, points, weights=None) -> np.ndarray:
    """Literal weighted sum  sum_k a_k 1{x in cluster k}  (defaults a_k = t_k - t_{k+1})."""
    a = model.schedule.weights if weights is None else np.asarray(weights, dtype=np.float64)
    lvl = model.level_of_points(points)
    # x is in clusters k >= lvl, so the sum is a suffix sum of the weights
    suffix = np.append(np.cumsum(a[::-1])[::-1], 0.0)
    return suffix[np.where(lvl >= 0, lvl, len(a))]


def rank(model: NestedClusterModel, points) -> np.ndarray:
    """Indices of ``points`` from most to least abnormal (ascending score, stable)."""
    return np.argsort(score_points(model, points), kind="stable")


def save_model(path, model: NestedClusterModel) -> None:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n")


def load_model(path) -> NestedClusterModel:
    return NestedClusterModel.from_dict(json.loads(Path(path).read_text()))
