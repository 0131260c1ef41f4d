import ast
import math
from pathlib import Path

import numpy as np
import pytest

import trajsynth.generation as generation
from trajsynth.core import BBox, Rng
from trajsynth.discretization import FirstLayerGrid, TwoLayerGrid
from trajsynth.generation import (
    ModelChoice,
    SelectionThresholds,
    default_thresholds,
    generate_dataset,
    random_walk,
    sample_locations,
    sample_trip,
    select_model,
)
from trajsynth.markov import START, MarkovModel, count_from_states, privatize
from trajsynth.trips import TripMatrix

UNIT = BBox(0.0, 0.0, 1.0, 1.0)
TH = SelectionThresholds(theta1=1e-9)


def _private(order, m, rows):
    return MarkovModel(order, m, {k: np.asarray(v, dtype=float) for k, v in rows.items()}, noised=True, normcut_applied=True)


def _chain_models():
    # states A=0, B=1, C=2; END is column 3
    m1 = _private(1, 3, {(START,): [1, 0, 0, 0], (0,): [0, 1, 0, 0], (1,): [0, 0, 0, 1]})
    m2 = _private(2, 3, {(START, 0): [0, 1, 0, 0], (0, 1): [0, 0, 0, 1]})
    return m1, m2


def test_default_thresholds_examples():
    th = default_thresholds(0.4, 100)
    assert th.theta1 == pytest.approx(353.5533905932738)
    assert th.theta2 == 5
    assert default_thresholds(math.sqrt(2), 1).theta1 == pytest.approx(1.0)


def test_thresholds_validation():
    with pytest.raises(ValueError):
        SelectionThresholds(theta1=0)
    with pytest.raises(ValueError):
        SelectionThresholds(theta1=1, theta2=1)
    with pytest.raises(ValueError):
        default_thresholds(0.0, 3)


@pytest.mark.parametrize(
    "row, choice",
    [
        ([1, 1, 1], ModelChoice.FIRST),  # sum 3 < theta1
        ([60, 10, 10, 10, 10], ModelChoice.FIRST),  # ratio 6
        ([30, 20, 20, 20, 10], ModelChoice.SECOND),  # ratio 1.5
        ([100, 0, 0], ModelChoice.FIRST),  # zero runner-up counts as dominance
    ],
)
def test_select_model_examples(row, choice):
    assert select_model(row, SelectionThresholds(10.0)) is choice


def test_select_model_ratio_boundary():
    th = SelectionThresholds(10.0)
    assert select_model([50, 10, 10], th) is ModelChoice.FIRST  # ratio exactly 5
    assert select_model([50, 10, 40], th) is ModelChoice.SECOND
    assert select_model([50, 10, 40, 0], th) is select_model([50, 40, 10], th)


def test_select_model_scale_equivariance():
    rng = np.random.default_rng(0)
    for _ in range(500):
        row = rng.exponential(size=int(rng.integers(1, 8))) * rng.integers(0, 2, 1)
        theta1 = float(rng.uniform(0.1, 3))
        c = float(rng.uniform(0.01, 100))
        a = select_model(row, SelectionThresholds(theta1))
        b = select_model(row * c, SelectionThresholds(theta1 * c))
        assert a is b


def test_sample_trip_point_mass():
    t = np.zeros((8, 8))
    t[2, 7] = 3.0
    rng = Rng(0)
    assert all(sample_trip(TripMatrix(t, 3.0), rng) == (2, 7) for _ in range(200))


def test_sample_trip_uniform_frequencies():
    t = np.zeros((3, 3))
    pairs = [(0, 1), (1, 2), (2, 0), (2, 2)]
    for p in pairs:
        t[p] = 1.0
    rng = Rng(1)
    n = 10**5
    draws = [sample_trip(TripMatrix(t, 4.0), rng) for _ in range(n)]
    sigma = math.sqrt(n * 0.25 * 0.75)
    for p in pairs:
        assert abs(draws.count(p) - n / 4) <= 3 * sigma


def test_sample_trip_zero_matrix_raises():
    with pytest.raises(ValueError):
        sample_trip(TripMatrix(np.zeros((2, 2)), 1.0), Rng(0))


def test_degenerate_chain_walk_with_and_without_trips():
    m1, m2 = _chain_models()
    t = np.zeros((3, 3))
    t[0, 1] = 1.0
    rng = Rng(2)
    for mode in ("adaptive", "first", "second"):
        for trips in (None, TripMatrix(t, 1.0)):
            assert random_walk(m1, m2, trips, TH, rng, 20, mode=mode) == [0, 1]


def test_walk_without_end_hits_max_len():
    m = 3
    rows = {(START,): [1, 1, 1, 0]}
    for s in range(m):
        rows[(s,)] = [0 if j == s else 1 for j in range(m)] + [0]
    m1 = _private(1, m, rows)
    m2 = _private(2, m, {})
    rng = Rng(3)
    for max_len in (1, 2, 7, 40):
        for _ in range(20):
            walk = random_walk(m1, m2, None, TH, rng, max_len)
            assert len(walk) == max_len
            assert all(a != b for a, b in zip(walk, walk[1:]))


def test_all_zero_rows_still_terminate():
    m1 = _private(1, 2, {(START,): [1, 0, 0], (0,): [0, 0, 0]})
    m2 = _private(2, 2, {})
    assert random_walk(m1, m2, None, TH, Rng(0), 10) == [0]


def test_second_order_context_overrides_first_order():
    # first-order row of state 1 never ends, but context (0, 1) always ends
    m1 = _private(1, 3, {(START,): [1, 0, 0, 0], (0,): [0, 1, 0, 0], (1,): [1, 0, 1, 0], (2,): [0, 0, 0, 1]})
    m2 = _private(2, 3, {(START, 0): [0, 1, 0, 0], (0, 1): [0, 0, 0, 1]})
    rng = Rng(0)
    assert random_walk(m1, m2, None, SelectionThresholds(1e-9), rng, 10, mode="second") == [0, 1]
    # undefined second-order context falls back to first order
    walk = random_walk(m1, _private(2, 3, {}), None, TH, rng, 3, mode="second")
    assert walk[:2] == [0, 1]


def test_repeated_trajectory_is_reproduced():
    seqs = [[0, 1, 2]] * 5
    m1 = privatize(count_from_states(seqs, 1, 4), math.inf, Rng(0))
    m2 = privatize(count_from_states(seqs, 2, 4), math.inf, Rng(0))
    rng = Rng(4)
    for mode in ("adaptive", "first", "second"):
        for _ in range(50):
            assert random_walk(m1, m2, None, default_thresholds(math.inf, 4), rng, 30, mode=mode) == [0, 1, 2]


def test_raw_models_are_rejected():
    raw = count_from_states([[0, 1]], 1, 2)
    m2 = privatize(count_from_states([[0, 1]], 2, 2), 1.0, Rng(0))
    with pytest.raises(ValueError):
        random_walk(raw, m2, None, TH, Rng(0), 5)
    noised_only = MarkovModel(1, 2, dict(raw.rows), noised=True)
    with pytest.raises(ValueError):
        random_walk(noised_only, m2, None, TH, Rng(0), 5)


def test_start_without_row_is_resampled_then_fails():
    m1 = _private(1, 2, {(START,): [1, 0, 0]})
    m2 = _private(2, 2, {})
    t = np.zeros((2, 2))
    t[1, 0] = 1.0  # state 1 has no first-order row
    with pytest.raises(RuntimeError):
        random_walk(m1, m2, TripMatrix(t, 1.0), TH, Rng(0), 5)


def test_sample_locations_midpoint_and_containment():
    grid = TwoLayerGrid(FirstLayerGrid(UNIT, 1))
    assert sample_locations([0], grid, Rng(0), u=[[0.5, 0.5]]).tolist() == [[0.5, 0.5]]
    grid = TwoLayerGrid(FirstLayerGrid(BBox(-1, 2, 3, 5), 3), kappa=[1, 2, 1, 3, 1, 1, 1, 1, 2])
    states = Rng(1).gen.integers(0, grid.m, 2000)
    pts = sample_locations(states, grid, Rng(2))
    r = grid.rects[states]
    assert np.all((r[:, 0] <= pts[:, 0]) & (pts[:, 0] <= r[:, 2]) & (r[:, 1] <= pts[:, 1]) & (pts[:, 1] <= r[:, 3]))
    with pytest.raises(ValueError):
        sample_locations([], grid, Rng(0))


def test_sample_locations_mean():
    grid = TwoLayerGrid(FirstLayerGrid(BBox(0, 0, 4, 2), 2))
    n = 10**4
    pts = sample_locations(np.full(n, 3), grid, Rng(5))  # leaf [2, 4] x [1, 2]
    for axis, (lo, hi) in enumerate(((2.0, 4.0), (1.0, 2.0))):
        sigma = (hi - lo) / math.sqrt(12 * n)
        assert abs(pts[:, axis].mean() - (lo + hi) / 2) <= 3 * sigma


def _toy_models():
    seqs = [[0, 1, 3], [2, 3], [0, 1], [3, 2, 0, 1]] * 200
    m1 = privatize(count_from_states(seqs, 1, 4), 1.0, Rng(0))
    m2 = privatize(count_from_states(seqs, 2, 4), 1.0, Rng(1))
    return m1, m2, TwoLayerGrid(FirstLayerGrid(UNIT, 2))


def test_generate_dataset_cardinality_and_determinism():
    m1, m2, grid = _toy_models()
    th = default_thresholds(1.0, 4)
    with pytest.raises(ValueError):
        generate_dataset(m1, m2, None, grid, th, 0, Rng(0), 20)
    ds = generate_dataset(m1, m2, None, grid, th, 50, Rng(7), 20)
    assert len(ds) == 50
    again = generate_dataset(m1, m2, None, grid, th, 50, Rng(7), 20)
    assert all(np.array_equal(a, b) for a, b in zip(ds, again))


def test_generate_dataset_default_size_from_trips():
    m1, m2, grid = _toy_models()
    t = np.full((4, 4), 0.75)
    ds = generate_dataset(m1, m2, TripMatrix(t, 12.0), grid, default_thresholds(1.0, 4), None, Rng(0), 20)
    assert len(ds) == 12


def test_walks_terminate_and_are_pure():
    m1, m2, grid = _toy_models()
    th = default_thresholds(1.0, 4)
    rng = Rng(9)
    for _ in range(2000):
        walk = random_walk(m1, m2, None, th, rng, 15)
        assert 1 <= len(walk) <= 15
        assert all(0 <= s < 4 for s in walk)
        assert all(a != b for a, b in zip(walk, walk[1:]))


def test_generation_module_has_no_raw_count_access():
    tree = ast.parse(Path(generation.__file__).read_text())
    names = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            names.update(a.name for a in node.names)
            assert node.module not in ("discretization",) or {a.name for a in node.names} == {"TwoLayerGrid"}
        if isinstance(node, ast.Import):
            names.update(a.name for a in node.names)
    forbidden = {"count_transitions", "count_from_states", "dataset_to_states", "normalized_density", "augment"}
    assert not names & forbidden
    assert not any(isinstance(n, ast.Attribute) and n.attr in forbidden for n in ast.walk(tree))
