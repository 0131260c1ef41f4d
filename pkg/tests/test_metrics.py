import numpy as np
import pytest

from trajsynth.core import BBox, Rng, TrajectoryDataset
from trajsynth.metrics import (
    DensityQuery,
    Histogram,
    are,
    count_in_circles,
    count_patterns,
    default_phi,
    density_are,
    distribution_jsd,
    distribution_of,
    evaluate,
    histogram,
    jsd,
    jsd_masses,
    make_density_queries,
    pattern_are,
    top_patterns,
)

from . import oracles

UNIT = BBox(0.0, 0.0, 1.0, 1.0)


def _h(masses):
    masses = np.asarray(masses, dtype=float)
    return Histogram(np.linspace(0, 1, len(masses) + 1), masses)


def test_jsd_examples():
    assert jsd(_h([0.3, 0.7]), _h([0.3, 0.7])) == 0.0
    assert jsd(_h([1, 0]), _h([0.5, 0.5])) == pytest.approx(0.311278, abs=1e-6)
    assert jsd(_h([1, 0]), _h([0, 1])) == pytest.approx(1.0, abs=1e-12)


def test_jsd_mismatched_edges_raise():
    with pytest.raises(ValueError):
        jsd(_h([1, 0]), Histogram(np.array([0, 0.5, 2.0]), np.array([1.0, 0.0])))


def test_jsd_properties_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        k = int(rng.integers(1, 60))
        p = rng.dirichlet(np.full(k, 0.3))
        q = rng.dirichlet(np.full(k, 0.3))
        d = jsd_masses(p, q)
        assert 0 <= d <= 1
        assert abs(d - jsd_masses(q, p)) <= 1e-12
        assert jsd_masses(p, p) == 0
        assert d == pytest.approx(oracles.jsd_bits(p, q), abs=1e-12)


def test_histogram_examples():
    h = histogram([1.0, 49.0], 50, 50.0)
    assert h.masses[1] == 0.5 and h.masses[49] == 0.5 and h.masses.sum() == 1
    assert histogram([0.0, 0.0], 50, 0.0).masses[0] == 1.0
    assert histogram([], 50, 3.0).masses.sum() == 0
    assert histogram([3.0], 10, 3.0).masses[-1] == 1.0  # max lands in the last bin


def test_distribution_of_point_mass_for_zero_length():
    ds = TrajectoryDataset((np.array([[0.2, 0.2]]), np.array([[0.4, 0.4]])), UNIT)
    h = distribution_of(ds, "length")
    assert h.masses[0] == 1.0 and len(h.masses) == 50
    with pytest.raises(ValueError):
        distribution_of(ds, "speed")


def test_distribution_jsd_shares_range():
    a = TrajectoryDataset((np.array([[0, 0], [0.1, 0]]),), UNIT)
    b = TrajectoryDataset((np.array([[0, 0], [1.0, 0]]),), UNIT)
    assert distribution_jsd(a, b, "length") == pytest.approx(1.0)
    assert distribution_jsd(a, a, "diameter") == 0.0


def test_are_formula():
    assert are([10], [5], 1.0) == 0.5
    assert are([0], [2.0], 2.0) == 1.0
    assert are([100, 0], [50, 0], 1.0) == 0.25
    assert are([], [], 1.0) == 0.0


def test_default_phi():
    assert default_phi(10) == 1.0
    assert default_phi(5000) == 5.0


def test_density_query_counts():
    pts = [np.array([[0.5, 0.5]])] * 100 + [np.array([[0.9, 0.9], [0.1, 0.1]])]
    d_o = TrajectoryDataset(tuple(pts), UNIT)
    d_s = TrajectoryDataset(tuple(pts[:50]), UNIT)
    q = [DensityQuery(0.5, 0.5, 0.1), DensityQuery(0.1, 0.1, 0.05)]
    assert count_in_circles(d_o, q).tolist() == [100, 1]
    assert are(count_in_circles(d_o, q)[:1], count_in_circles(d_s, q)[:1], 1e-3) == 0.5
    with pytest.raises(ValueError):
        DensityQuery(0, 0, 0)


def test_query_generation_range():
    qs = make_density_queries(BBox(0, 0, 3, 4), 1000, Rng(0))
    r = np.array([q.radius for q in qs])
    assert r.min() >= 0.05 * 5 and r.max() <= 0.25 * 5
    assert all(0 <= q.cx <= 3 and 0 <= q.cy <= 4 for q in qs)


def _random_ds(rng, n, max_pts=6):
    return TrajectoryDataset(tuple(rng.uniform((int(rng.gen.integers(1, max_pts + 1)), 2)) for _ in range(n)), UNIT)


def test_ares_are_zero_on_identical_copy():
    for seed in range(5):
        ds = _random_ds(Rng(seed), 40)
        copy = TrajectoryDataset(tuple(t.copy() for t in ds), UNIT)
        assert density_are(ds, copy, Rng(seed + 10)) == 0.0
        assert pattern_are(ds, copy)[0] == 0.0


def test_density_are_order_invariant():
    rng = Rng(3)
    a, b = _random_ds(rng, 30), _random_ds(rng, 25)
    perm = TrajectoryDataset(tuple(reversed(b.trajectories)), UNIT)
    perm_a = TrajectoryDataset(tuple(a.trajectories[::2] + a.trajectories[1::2]), UNIT)
    base = density_are(a, b, Rng(1))
    assert density_are(a, perm, Rng(1)) == base
    assert density_are(perm_a, b, Rng(1)) == base


def test_pattern_counting_example():
    counts = count_patterns([(0, 1, 2)])
    assert counts == {(0, 1): 1, (1, 2): 1, (0, 1, 2): 1}


def test_pattern_counting_matches_oracle():
    rng = np.random.default_rng(4)
    for _ in range(50):
        seqs = [oracles.collapse(rng.integers(0, 5, int(rng.integers(1, 7))).tolist()) for _ in range(int(rng.integers(1, 11)))]
        assert dict(count_patterns(seqs)) == oracles.patterns(seqs)


def test_top_patterns_tie_break():
    counts = count_patterns([(3, 1), (0, 2), (0, 2)])
    assert top_patterns(counts, 2) == [(0, 2), (3, 1)]


def test_pattern_are_single_pattern():
    # cells on a 20x20 grid: (0,0) is cell 0, (0.1,0) is cell 2
    one = np.array([[0.01, 0.01], [0.11, 0.01]])
    d_o = TrajectoryDataset((one,) * 10, UNIT)
    d_s = TrajectoryDataset((one,) * 5, UNIT)
    err, used = pattern_are(d_o, d_s, mu=1, phi=1.0)
    assert err == 0.5 and used == 1


def test_pattern_are_uses_available_patterns():
    d_o = TrajectoryDataset((np.array([[0.01, 0.01], [0.11, 0.01]]),), UNIT)
    assert pattern_are(d_o, d_o, mu=200)[1] == 1


def test_evaluate_report():
    rng = Rng(8)
    a, b = _random_ds(rng, 30), _random_ds(rng, 30)
    rep = evaluate(a, b, Rng(0), n_queries=50)
    d = rep.to_dict()
    assert set(d) >= {"length_jsd", "diameter_jsd", "density_are", "pattern_are", "meta.phi", "meta.mu"}
    assert 0 <= rep.length_jsd <= 1 and 0 <= rep.diameter_jsd <= 1
    assert d["meta.phi_is_default"] is True
