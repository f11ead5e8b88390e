import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emscore import (
    DataError,
    GridSpec,
    SparseHistogram,
    ThresholdSchedule,
    choose_t1,
    depth_to_floor,
    fit,
    geometric_schedule,
    ingest,
    max_excess_cluster,
    rank,
    score,
    score_points,
)
from emscore.em_fit import load_model, save_model, score_by_weights
from emscore.synth import TOY

from conftest import all_unions, brute_max_excess, random_histogram

A1, A2, A3 = (0,), (1,), (2,)


# -- max_excess_cluster ------------------------------------------------------

def test_toy_brute_force_values(toy):
    hist, _ = toy
    # oracle: enumerate the 8 unions of the three rectangles
    v03, _ = brute_max_excess([0.5, 0.45, 0.05], [1, 2, 0.5], 0.3)
    v006, _ = brute_max_excess([0.5, 0.45, 0.05], [1, 2, 0.5], 0.06)
    assert v03 == pytest.approx(0.2, abs=1e-15)
    assert v006 == pytest.approx(0.79, abs=1e-15)
    cells, val = max_excess_cluster(hist, 0.3)
    assert cells == {A1} and val == pytest.approx(v03, abs=1e-15)
    cells, val = max_excess_cluster(hist, 0.06)
    assert cells == {A1, A2, A3} and val == pytest.approx(v006, abs=1e-15)


def test_above_max_ratio_is_empty(toy):
    hist, _ = toy
    assert max_excess_cluster(hist, 0.51) == (set(), 0.0)


def test_rejects_nonpositive_t(toy):
    with pytest.raises(ValueError):
        max_excess_cluster(toy[0], 0.0)


@pytest.mark.parametrize("seed", range(60))
def test_argmax_matches_exhaustive(seed):
    rng = np.random.default_rng(seed)
    h = random_histogram(rng, max_cells=10)
    t = float(rng.uniform(0.2, 1.2) * h.ratios.max())
    cells, val = max_excess_cluster(h, t)
    best, mask = brute_max_excess(h.masses, h.volumes, t)
    assert val == pytest.approx(best, abs=1e-12)
    brute = {tuple(map(int, i)) for i in h.index[mask]}
    # sets agree up to cells of zero excess
    zero = {tuple(map(int, i)) for i, m, v in zip(h.index, h.masses, h.volumes) if abs(m - t * v) < 1e-12}
    assert (cells ^ brute) <= zero


# -- choose_t1 ---------------------------------------------------------------

def test_choose_t1(toy):
    assert choose_t1(toy[0]) == 0.5
    single = SparseHistogram(GridSpec(2, 0.5), [[3, 4]], [7], 7)
    assert choose_t1(single) == 1 / 0.25
    tie = SparseHistogram(GridSpec(1, 1.0), [[0], [1], [2]], [4, 4, 2], 10)
    t1 = choose_t1(tie)
    assert t1 == 0.4
    assert max_excess_cluster(tie, t1) == ({(0,), (1,)}, 0.0)
    with pytest.raises(DataError):
        choose_t1(SparseHistogram(GridSpec(1, 1.0), np.empty((0, 1)), [], 0))


# -- schedules ---------------------------------------------------------------

def test_geometric_schedule_substitution():
    assert geometric_schedule(1.0, 100, 2).levels[1] == pytest.approx(1 / 1.1, rel=1e-15)
    assert geometric_schedule(1.0, 7, 1).levels == (1.0,)
    assert geometric_schedule(0.5, 4, 3).levels[2] == pytest.approx(0.5 / 1.5**2, rel=1e-15)
    with pytest.raises(ValueError):
        geometric_schedule(1.0, 10, 0)


def test_schedule_weights_sum_to_t1():
    s = geometric_schedule(0.7, 50, 40)
    assert np.all(s.weights > 0)
    assert s.weights.sum() == pytest.approx(0.7, rel=1e-14)


def test_schedule_validation():
    with pytest.raises(ValueError):
        ThresholdSchedule((0.5, 0.5))
    with pytest.raises(ValueError):
        ThresholdSchedule((0.5, -0.1))


@pytest.mark.parametrize("t1,n,t_min", [(1.0, 100, 0.01), (0.5, 4, 0.1), (2.0, 10**5, 1e-4), (0.3, 9, 0.3)])
def test_depth_to_floor_is_minimal(t1, n, t_min):
    N = depth_to_floor(t1, n, t_min)
    lv = geometric_schedule(t1, n, N).levels
    assert lv[-1] <= t_min
    assert N == 1 or lv[-2] > t_min


# -- fit / score / rank on the toy -------------------------------------------

@pytest.fixture
def toy_model(toy):
    return fit(toy[0], ThresholdSchedule((0.5, 0.3, 0.06)))


def test_toy_fit(toy_model):
    assert toy_model.clusters == [{A1}, {A1}, {A1, A2, A3}]
    assert toy_model.volumes.tolist() == [1.0, 1.0, 3.5]
    assert toy_model.masses.tolist() == [0.5, 0.5, 1.0]


def test_fit_single_cell_and_empty_levels():
    h = SparseHistogram(GridSpec(2, 1.0), [[1, 1]], [5], 5)
    m = fit(h, geometric_schedule(choose_t1(h), 5, 4))
    assert all(c == {(1, 1)} for c in m.clusters)
    m = fit(h, ThresholdSchedule((5.0, 3.0)))
    assert m.clusters == [set(), set()]
    assert score(m, (1.5, 1.5)) == 0.0


def test_toy_scores(toy_model):
    assert score(toy_model, (1.5, 0.5)) == 0.5
    assert score(toy_model, (0.0, 0.5)) == 0.06
    assert score(toy_model, (1.5, 1.25)) == 0.06


def test_score_outside_clusters_is_zero():
    h = SparseHistogram(GridSpec(2, 1.0), [[0, 0], [3, 3]], [9, 1], 10)
    m = fit(h, ThresholdSchedule((0.9, 0.5)))
    assert score(m, (3.5, 3.5)) == 0.0
    assert score(m, (-100.0, 7.0)) == 0.0
    assert score(m, (0.5, 0.5)) == 0.9
    with pytest.raises(DataError):
        score(m, (np.nan, 0.0))


def test_toy_rank(toy_model):
    pts = np.array([[1.5, 0.5], [0.0, 0.5], [1.5, 1.25]])  # A1, A2, A3
    s = score_points(toy_model, pts)
    assert s.tolist() == [0.5, 0.06, 0.06]
    # A2 and A3 tie at 0.06, so input order decides
    assert rank(toy_model, pts).tolist() == [1, 2, 0]


def test_rank_stable_and_outliers_first(toy_model):
    same = np.array([[1.2, 0.1], [1.7, 0.9], [1.4, 0.4]])
    assert rank(toy_model, same).tolist() == [0, 1, 2]
    h = SparseHistogram(GridSpec(2, 1.0), [[0, 0]], [3], 3)
    m = fit(h, ThresholdSchedule((1.0,)))
    assert rank(m, [[0.5, 0.5], [9.0, 9.0], [0.2, 0.2]])[0] == 1


# -- invariants over random histograms ---------------------------------------

def _random_model(seed, d=None, max_cells=12):
    rng = np.random.default_rng(seed)
    h = random_histogram(rng, d=d, max_cells=max_cells)
    N = int(rng.integers(1, 30))
    n = int(rng.integers(1, 500))
    return h, fit(h, geometric_schedule(choose_t1(h) * rng.uniform(0.5, 1.2), n, N)), rng


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=150, deadline=None)
def test_nested_and_monotone(seed):
    h, m, _ = _random_model(seed)
    cl = m.clusters
    assert all(a <= b for a, b in zip(cl, cl[1:]))
    rows = {tuple(map(int, i)): j for j, i in enumerate(h.index)}
    def excess(cells, t):
        return sum(max(h.masses[rows[c]] - t * h.volumes[rows[c]], 0.0) for c in sorted(cells))

    for k, t in enumerate(m.schedule.levels):
        tilde, value = max_excess_cluster(h, t)
        assert excess(cl[k], t) == excess(tilde, t)
        assert excess(cl[k], t) == pytest.approx(value, abs=1e-15)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_restricted_variant_matches_union(seed):
    # argmax over supersets of the previous cluster, by brute force
    h, m, _ = _random_model(seed, max_cells=8)
    cells = [tuple(map(int, i)) for i in h.index]
    masks = all_unions(len(cells))
    prev = np.zeros(len(cells), dtype=bool)
    for k, t in enumerate(m.schedule.levels):
        ok = masks[np.all(masks | ~prev, axis=1)]
        vals = ok @ h.masses - t * (ok @ h.volumes)
        best = vals.max()
        union = np.array([c in m.clusters[k] for c in cells])
        assert union @ h.masses - t * (union @ h.volumes) == pytest.approx(best, abs=1e-12)
        prev = union


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_level_set_identity_and_bounds(seed):
    h, m, rng = _random_model(seed)
    lo, hi = h.spec.cell_bounds(h.index)
    centers = (lo + hi) / 2
    far = centers + 40 * h.spec.l
    pts = np.vstack([centers, far])
    s = score_points(m, pts)
    t1 = m.schedule.levels[0]
    assert np.all(s >= 0) and np.all(s <= t1)
    for k, t in enumerate(m.schedule.levels):
        inside = {tuple(map(int, c)) for c in h.spec.cells_of(pts[s >= t])}
        assert inside == m.clusters[k]
    assert np.allclose(score_by_weights(m, pts), s, rtol=0, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_rank_invariant_to_weight_transform(seed):
    h, m, rng = _random_model(seed)
    lo, hi = h.spec.cell_bounds(h.index)
    pts = np.vstack([(lo + hi) / 2, lo + 100.0])
    base = rank(m, pts)
    a = m.schedule.weights
    for w in (a**2 + 1e-3, np.sqrt(a), rng.uniform(0.1, 5.0, len(a))):
        alt = np.argsort(score_by_weights(m, pts, w), kind="stable")
        assert alt.tolist() == base.tolist()


# -- persistence -------------------------------------------------------------

def test_model_roundtrip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(3)
    pts = rng.standard_t(2, size=(3000, 2))
    h = ingest(GridSpec(2, 0.5), pts)
    m = fit(h, geometric_schedule(choose_t1(h), h.n, 200))
    save_model(tmp_path / "m.json", m)
    back = load_model(tmp_path / "m.json")
    q = rng.standard_t(2, size=(5000, 2))
    assert np.array_equal(score_points(m, q), score_points(back, q))
    assert back.clusters == m.clusters
    assert np.array_equal(back.volumes, m.volumes)


def test_model_file_stores_increments(tmp_path, toy_model):
    import json

    save_model(tmp_path / "t.json", toy_model)
    obj = json.loads((tmp_path / "t.json").read_text())
    assert obj["schedule"]["levels"] == [0.5, 0.3, 0.06]
    assert obj["clusters"] == [[[0]], [], [[1], [2]]]
    assert load_model(tmp_path / "t.json").clusters == toy_model.clusters
