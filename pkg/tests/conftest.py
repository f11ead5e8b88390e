import itertools

import numpy as np
import pytest

from emscore import GridSpec, SparseHistogram, ingest, toy_fixture
from emscore.synth import TOY


def all_unions(m):
    """Every subset of range(m) as a boolean mask matrix (2^m, m)."""
    return np.array(list(itertools.product([False, True], repeat=m)), dtype=bool)


def brute_max_excess(masses, volumes, t):
    """max over all unions of cells of mass - t * volume, and one maximiser."""
    masks = all_unions(len(masses))
    vals = masks @ np.asarray(masses) - t * (masks @ np.asarray(volumes))
    j = int(np.argmax(vals))
    return float(vals[j]), masks[j]


def brute_min_volume(masses, volumes, alpha):
    """Smallest volume among unions with mass >= alpha (cells taken in index order)."""
    masks = all_unions(len(masses))
    best = np.inf
    for mask in masks:
        if np.asarray(masses)[mask].sum() >= alpha - 1e-12:
            best = min(best, float(np.asarray(volumes)[mask].sum()))
    return best


def random_histogram(rng, d=None, max_cells=12, max_count=30, l=None):
    d = d or int(rng.integers(1, 4))
    l = l or float(rng.choice([0.25, 0.5, 1.0, 2.0]))
    m = int(rng.integers(1, max_cells + 1))
    pool = rng.integers(-5, 6, size=(4 * m, d))
    index = np.unique(pool, axis=0)[:m]
    counts = rng.integers(1, max_count + 1, size=len(index))
    order = np.lexsort(index.T[::-1])
    return SparseHistogram(GridSpec(d, l), index[order], counts[order], int(counts.sum()))


@pytest.fixture
def toy():
    hist, meta = toy_fixture()
    return hist, meta


@pytest.fixture
def toy_points():
    return TOY.points()


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""

    def record(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"acceptance {number:>2} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
