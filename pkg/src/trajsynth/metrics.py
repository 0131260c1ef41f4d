"""Utility metrics comparing an original and a synthetic dataset."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Rng, TrajectoryDataset, trajectory_diameter, trajectory_length
from .discretization import FirstLayerGrid

DEFAULT_BINS = 50
DEFAULT_QUERIES = 500
DEFAULT_MU = 200
DEFAULT_RADIUS_RANGE = (0.05, 0.25)
PATTERN_GRID = 20


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        if len(self.edges) != len(self.masses) + 1:
            raise ValueError("need one more edge than bins")


def jsd(p: Histogram, q: Histogram) -> float:
    """Jensen-Shannon divergence in bits (so it lies in [0, 1])."""
    if not np.array_equal(p.edges, q.edges):
        raise ValueError("histograms have different bin edges")
    return jsd_masses(p.masses, q.masses)


def jsd_masses(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mid = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / mid[nz])))

    return min(max(0.5 * kl(p) + 0.5 * kl(q), 0.0), 1.0)


def _quantity(dataset: TrajectoryDataset, quantity: str) -> np.ndarray:
    fn = {"length": trajectory_length, "diameter": trajectory_diameter}.get(quantity)
    if fn is None:
        raise ValueError(f"unknown quantity {quantity!r}")
    return np.array([fn(t) for t in dataset], dtype=float)


def histogram(values, n_bins: int, upper: float) -> Histogram:
    """Uniform bins over ``[0, upper]``; values at or above ``upper`` go to the last bin."""
    if not upper > 0:
        upper = 1.0
    edges = np.linspace(0.0, upper, n_bins + 1)
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return Histogram(edges, np.zeros(n_bins))
    idx = np.clip(np.floor(values / upper * n_bins).astype(np.int64), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(float)
    return Histogram(edges, counts / counts.sum())


def distribution_of(dataset: TrajectoryDataset, quantity: str, n_bins: int = DEFAULT_BINS, upper: float | None = None) -> Histogram:
    values = _quantity(dataset, quantity)
    if upper is None:
        upper = float(values.max()) if values.size else 0.0
    return histogram(values, n_bins, upper)


def distribution_jsd(d_o: TrajectoryDataset, d_s: TrajectoryDataset, quantity: str, n_bins: int = DEFAULT_BINS) -> float:
    vo, vs = _quantity(d_o, quantity), _quantity(d_s, quantity)
    upper = max(vo.max(initial=0.0), vs.max(initial=0.0))
    return jsd(histogram(vo, n_bins, upper), histogram(vs, n_bins, upper))


def default_phi(n_original: int) -> float:
    return max(1.0, 0.001 * n_original)


@dataclass(frozen=True)
class DensityQuery:
    cx: float
    cy: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("query radius must be positive")


def make_density_queries(bbox, n_queries: int, rng: Rng, radius_range=DEFAULT_RADIUS_RANGE) -> list[DensityQuery]:
    lo, hi = radius_range
    diag = bbox.diagonal
    u = rng.uniform((n_queries, 3))
    cx = bbox.xmin + u[:, 0] * bbox.width
    cy = bbox.ymin + u[:, 1] * bbox.height
    r = (lo + u[:, 2] * (hi - lo)) * diag
    return [DensityQuery(float(a), float(b), float(c)) for a, b, c in zip(cx, cy, r)]


def count_in_circles(dataset: TrajectoryDataset, queries) -> np.ndarray:
    """Number of trajectories with at least one point inside each circle."""
    if len(dataset) == 0:
        return np.zeros(len(queries))
    pts = dataset.all_points()
    offsets = dataset.offsets()
    starts = offsets[:-1]
    out = np.empty(len(queries))
    for k, qy in enumerate(queries):
        inside = ((pts[:, 0] - qy.cx) ** 2 + (pts[:, 1] - qy.cy) ** 2 <= qy.radius**2).astype(np.int64)
        out[k] = np.count_nonzero(np.add.reduceat(inside, starts))
    return out


def are(true_counts, est_counts, phi: float) -> float:
    t = np.asarray(true_counts, dtype=float)
    e = np.asarray(est_counts, dtype=float)
    if t.size == 0:
        return 0.0
    return float(np.mean(np.abs(t - e) / np.maximum(t, phi)))


def density_are(
    d_o: TrajectoryDataset,
    d_s: TrajectoryDataset,
    rng: Rng,
    n_queries: int = DEFAULT_QUERIES,
    phi: float | None = None,
    radius_range=DEFAULT_RADIUS_RANGE,
) -> float:
    phi = default_phi(len(d_o)) if phi is None else phi
    queries = make_density_queries(d_o.bbox, n_queries, rng, radius_range)
    return are(count_in_circles(d_o, queries), count_in_circles(d_s, queries), phi)


def count_patterns(state_seqs, min_len: int = 2, max_len: int = 5) -> Counter:
    """Occurrences of every contiguous state subsequence with ``min_len..max_len`` states."""
    counts: Counter = Counter()
    for seq in state_seqs:
        s = tuple(int(v) for v in seq)
        for n in range(min_len, min(max_len, len(s)) + 1):
            counts.update(s[i : i + n] for i in range(len(s) - n + 1))
    return counts


def _grid_sequences(dataset: TrajectoryDataset, grid: FirstLayerGrid) -> list[tuple]:
    out = []
    for t in dataset:
        cells = grid.locate_cells(t)
        keep = np.ones(len(cells), dtype=bool)
        keep[1:] = cells[1:] != cells[:-1]
        out.append(tuple(cells[keep].tolist()))
    return out


def top_patterns(counts: Counter, mu: int) -> list[tuple]:
    return sorted(counts, key=lambda p: (-counts[p], p))[:mu]


def pattern_are(
    d_o: TrajectoryDataset,
    d_s: TrajectoryDataset,
    mu: int = DEFAULT_MU,
    phi: float | None = None,
    grid_size: int = PATTERN_GRID,
) -> tuple[float, int]:
    """ARE over the ``mu`` most frequent original patterns; returns (error, patterns used)."""
    phi = default_phi(len(d_o)) if phi is None else phi
    grid = FirstLayerGrid(d_o.bbox, grid_size)
    co = count_patterns(_grid_sequences(d_o, grid))
    cs = count_patterns(_grid_sequences(d_s, grid))
    top = top_patterns(co, mu)
    if not top:
        return 0.0, 0
    return are([co[p] for p in top], [cs.get(p, 0) for p in top], phi), len(top)


@dataclass
class MetricReport:
    length_jsd: float
    diameter_jsd: float
    density_are: float
    pattern_are: float
    meta: dict = field(default_factory=dict)

    METRICS = ("length_jsd", "diameter_jsd", "density_are", "pattern_are")

    def to_dict(self) -> dict:
        d = asdict(self)
        flat = {k: d[k] for k in self.METRICS}
        flat.update({f"meta.{k}": v for k, v in sorted(self.meta.items())})
        return flat


def evaluate(
    d_o: TrajectoryDataset,
    d_s: TrajectoryDataset,
    rng: Rng,
    n_bins: int = DEFAULT_BINS,
    n_queries: int = DEFAULT_QUERIES,
    mu: int = DEFAULT_MU,
    phi: float | None = None,
    radius_range=DEFAULT_RADIUS_RANGE,
) -> MetricReport:
    phi_used = default_phi(len(d_o)) if phi is None else float(phi)
    p_are, n_pat = pattern_are(d_o, d_s, mu=mu, phi=phi_used)
    return MetricReport(
        length_jsd=distribution_jsd(d_o, d_s, "length", n_bins),
        diameter_jsd=distribution_jsd(d_o, d_s, "diameter", n_bins),
        density_are=density_are(d_o, d_s, rng, n_queries, phi_used, radius_range),
        pattern_are=p_are,
        meta={
            "bins": n_bins,
            "queries": n_queries,
            "mu": mu,
            "patterns_used": n_pat,
            "phi": phi_used,
            "phi_is_default": phi is None,
            "radius_range": list(radius_range),
        },
    )


def density_heatmap(dataset: TrajectoryDataset, size: int = 80) -> np.ndarray:
    """Trajectory counts per cell of a ``size x size`` grid (row 0 at ``ymin``)."""
    grid = FirstLayerGrid(dataset.bbox, size)
    out = np.zeros(size * size)
    for t in dataset:
        out[np.unique(grid.locate_cells(t))] += 1
    return out.reshape(size, size)


def heatmap_csv(heat: np.ndarray) -> str:
    return "\n".join(",".join(str(int(v)) for v in row) for row in heat) + "\n"
