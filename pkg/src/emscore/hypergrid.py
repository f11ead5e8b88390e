"""Sparse hypercube partitions and per-cell empirical counts.

A :class:`GridSpec` tiles R^d with half-open boxes of side ``l``; a
:class:`BoxPartition` is a finite list of disjoint axis-aligned boxes (used for
hand-built fixtures).  Both map points to integer cell indices, and
:class:`SparseHistogram` stores only the occupied cells.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

_MAX_INDEX = 2.0**62


class DataError(ValueError):
    """Invalid input data (non-finite coordinates, wrong shape, empty sample)."""


def _as_points(points, d: int) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1) if x.size == d else x.reshape(-1, d)
    if x.ndim != 2 or x.shape[1] != d:
        raise DataError(f"expected points with {d} coordinates, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("points must have finite coordinates")
    return x


@dataclass(frozen=True)
class GridSpec:
    """Regular partition of R^d into boxes of side ``l``.

    Cell ``i`` is the half-open box prod_j [origin_j + l*i_j, origin_j + l*(i_j+1)).
    """

    d: int
    l: float
    origin: tuple = None

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        if not (np.isfinite(self.l) and self.l > 0):
            raise ValueError(f"l must be positive, got {self.l}")
        origin = (0.0,) * self.d if self.origin is None else tuple(float(o) for o in self.origin)
        if len(origin) != self.d:
            raise ValueError("origin must have d coordinates")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "l", float(self.l))
        object.__setattr__(self, "origin", origin)

    @property
    def index_dim(self) -> int:
        return self.d

    @property
    def cell_volume(self) -> float:
        return self.l**self.d

    def cell_volumes(self, index: np.ndarray) -> np.ndarray:
        return np.full(len(index), self.cell_volume)

    def cells_of(self, points, strict: bool = True) -> np.ndarray:
        """Integer cell index of every row of ``points``, shape (n, d)."""
        x = _as_points(points, self.d)
        q = np.floor((x - np.asarray(self.origin)) / self.l)
        if q.size and np.max(np.abs(q)) >= _MAX_INDEX:
            raise DataError("point too far from origin for integer cell indexing")
        return q.astype(np.int64)

    def cell_bounds(self, index) -> tuple[np.ndarray, np.ndarray]:
        i = np.asarray(index, dtype=np.float64)
        lo = np.asarray(self.origin) + self.l * i
        return lo, lo + self.l

    def to_dict(self) -> dict:
        return {"d": self.d, "l": self.l, "origin": list(self.origin)}


@dataclass(frozen=True)
class BoxPartition:
    """Finite collection of disjoint half-open boxes; cell ``(k,)`` is box ``k``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.ndim != 2 or lo.shape != hi.shape or len(lo) == 0:
            raise ValueError("lo and hi must be matching (k, d) arrays")
        if np.any(hi <= lo):
            raise ValueError("boxes must be nondegenerate")
        for a in range(len(lo)):
            for b in range(a + 1, len(lo)):
                if np.all(np.maximum(lo[a], lo[b]) < np.minimum(hi[a], hi[b])):
                    raise ValueError(f"boxes {a} and {b} overlap")
        object.__setattr__(self, "lo", tuple(map(tuple, lo.tolist())))
        object.__setattr__(self, "hi", tuple(map(tuple, hi.tolist())))

    @property
    def d(self) -> int:
        return len(self.lo[0])

    index_dim = 1

    def cell_volumes(self, index: np.ndarray) -> np.ndarray:
        vol = np.prod(np.asarray(self.hi) - np.asarray(self.lo), axis=1)
        return vol[np.asarray(index, dtype=np.int64)[:, 0]]

    def cells_of(self, points, strict: bool = True) -> np.ndarray:
        """Box number of every point; outside points raise, or map to ``-1`` when not strict."""
        x = _as_points(points, self.d)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        inside = np.all((x[:, None, :] >= lo) & (x[:, None, :] < hi), axis=2)
        hit = inside.any(axis=1)
        if strict and not np.all(hit):
            raise DataError(f"{int((~hit).sum())} point(s) fall outside every box")
        return np.where(hit, np.argmax(inside, axis=1), -1).astype(np.int64).reshape(-1, 1)

    def cell_bounds(self, index) -> tuple[np.ndarray, np.ndarray]:
        k = int(np.asarray(index).ravel()[0])
        return np.asarray(self.lo[k]), np.asarray(self.hi[k])

    def to_dict(self) -> dict:
        return {"boxes": [{"lo": list(a), "hi": list(b)} for a, b in zip(self.lo, self.hi)]}


Partition = Union[GridSpec, BoxPartition]


def partition_from_dict(obj: dict) -> Partition:
    if "boxes" in obj:
        return BoxPartition([b["lo"] for b in obj["boxes"]], [b["hi"] for b in obj["boxes"]])
    return GridSpec(int(obj["d"]), float(obj["l"]), tuple(obj.get("origin") or [0.0] * int(obj["d"])))


def cell_of(spec: Partition, x) -> tuple:
    """Index of the cell containing the single point ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return tuple(int(v) for v in spec.cells_of(x)[0])


def lookup_rows(keys: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Row position of each query in ``keys`` (unique rows), or -1 when absent."""
    keys = np.asarray(keys, dtype=np.int64)
    queries = np.asarray(queries, dtype=np.int64)
    if len(queries) == 0:
        return np.empty(0, dtype=np.int64)
    if len(keys) == 0:
        return np.full(len(queries), -1, dtype=np.int64)
    _, inv = np.unique(np.vstack([keys, queries]), axis=0, return_inverse=True)
    inv = inv.ravel()
    table = np.full(inv.max() + 1, -1, dtype=np.int64)
    table[inv[: len(keys)]] = np.arange(len(keys))
    return table[inv[len(keys):]]


@dataclass(frozen=True)
class SparseHistogram:
    """Occupied cells of a partition with their point counts.

    ``index`` rows are sorted lexicographically and unique; every count is >= 1.
    """

    spec: Partition
    index: np.ndarray
    count: np.ndarray
    n: int
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        index = np.asarray(self.index, dtype=np.int64).reshape(-1, self.spec.index_dim)
        count = np.asarray(self.count, dtype=np.int64).ravel()
        if len(index) != len(count):
            raise ValueError("index and count lengths differ")
        if np.any(count < 1):
            raise ValueError("stored counts must be positive")
        if int(count.sum()) != int(self.n):
            raise ValueError("counts must sum to n")
        index.setflags(write=False)
        count.setflags(write=False)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "count", count)
        object.__setattr__(self, "n", int(self.n))

    @property
    def counts(self) -> dict:
        """Mapping cell-index tuple -> count."""
        if self._lookup is None:
            object.__setattr__(self, "_lookup", {tuple(map(int, i)): int(c) for i, c in zip(self.index, self.count)})
        return self._lookup

    @property
    def volumes(self) -> np.ndarray:
        return self.spec.cell_volumes(self.index)

    @property
    def masses(self) -> np.ndarray:
        return self.count / self.n

    @property
    def ratios(self) -> np.ndarray:
        """Empirical mass over volume for every stored cell."""
        if self.n == 0:
            raise DataError("no data")
        return self.count / (self.n * self.volumes)

    def __len__(self) -> int:
        return len(self.count)

    def rows_of(self, cells) -> np.ndarray:
        return lookup_rows(self.index, np.asarray(cells, dtype=np.int64).reshape(-1, self.spec.index_dim))

    def merge(self, other: "SparseHistogram") -> "SparseHistogram":
        """Sum of two histograms over the same partition (shard merge)."""
        if other.spec != self.spec:
            raise ValueError("cannot merge histograms over different partitions")
        idx = np.vstack([self.index, other.index])
        cnt = np.concatenate([self.count, other.count])
        if len(idx) == 0:
            return self
        uniq, inv = np.unique(idx, axis=0, return_inverse=True)
        return SparseHistogram(self.spec, uniq, np.bincount(inv.ravel(), weights=cnt).astype(np.int64), self.n + other.n)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "n": self.n,
            "cells": [{"index": [int(v) for v in i], "count": int(c)} for i, c in zip(self.index, self.count)],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SparseHistogram":
        spec = partition_from_dict(obj["spec"])
        cells = obj["cells"]
        index = np.array([c["index"] for c in cells], dtype=np.int64).reshape(-1, spec.index_dim)
        count = np.array([c["count"] for c in cells], dtype=np.int64)
        order = np.lexsort(index.T[::-1]) if len(index) else np.arange(0)
        return cls(spec, index[order], count[order], int(obj["n"]))


def ingest(spec: Partition, points) -> SparseHistogram:
    """Count points per cell; only occupied cells are stored."""
    x = np.asarray(points, dtype=np.float64)
    if x.size == 0:
        return SparseHistogram(spec, np.empty((0, spec.index_dim), dtype=np.int64), np.empty(0, dtype=np.int64), 0)
    cells = spec.cells_of(x)
    uniq, cnt = np.unique(cells, axis=0, return_counts=True)
    return SparseHistogram(spec, uniq, cnt, len(cells))


def ingest_sharded(spec: Partition, shards: Iterable) -> SparseHistogram:
    hist = ingest(spec, [])
    for shard in shards:
        hist = hist.merge(ingest(spec, shard))
    return hist


def density_ratio(hist: SparseHistogram, cell) -> float:
    """Empirical mass of ``cell`` divided by its volume; 0 for absent cells."""
    if hist.n == 0:
        raise DataError("no data")
    row = hist.rows_of([cell])[0]
    if row < 0:
        return 0.0
    return float(hist.count[row] / (hist.n * hist.volumes[row]))


# --- file formats -----------------------------------------------------------

def read_points_csv(path, d: int | None = None) -> np.ndarray:
    """Read one point per row; a non-numeric first row is treated as a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        return np.empty((0, d or 0))
    try:
        x = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if d is not None and x.shape[1] != d:
        raise DataError(f"{path}: expected {d} columns, found {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{path}: non-finite coordinate")
    return x


def write_points_csv(path, points: np.ndarray, header: Sequence[str] | None = None) -> None:
    x = np.asarray(points, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is None:
            header = [f"x{j}" for j in range(x.shape[1])]
        w.writerow(header)
        for row in x:
            w.writerow([repr(float(v)) for v in row])


def save_histogram(path, hist: SparseHistogram) -> None:
    Path(path).write_text(json.dumps(hist.to_dict(), indent=1) + "\n")


def load_histogram(path) -> SparseHistogram:
    return SparseHistogram.from_dict(json.loads(Path(path).read_text()))
