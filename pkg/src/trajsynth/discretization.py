"""Two-layer adaptive grid: a uniform K x K first layer whose dense cells are
split again into kappa x kappa subcells, chosen from noisy densities.

Every unsplit first-layer cell and every subcell is a state. State ids are
assigned row-major over first-layer cells (row 0 at ``ymin``), subcells
row-major inside their parent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BBox, Point, Rng, TrajectoryDataset, laplace_noise, noise_scale

DEFAULT_KAPPA_DENOM = 2e7


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _bin(edges: np.ndarray, v: np.ndarray) -> np.ndarray:
    # half-open bins, closed at the last edge
    idx = np.searchsorted(edges, v, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


@dataclass(frozen=True)
class FirstLayerGrid:
    bbox: BBox
    K: int
    xedges: np.ndarray = field(init=False, repr=False, compare=False)
    yedges: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        b = BBox(*self.bbox)
        object.__setattr__(self, "bbox", b)
        object.__setattr__(self, "xedges", np.linspace(b.xmin, b.xmax, self.K + 1))
        object.__setattr__(self, "yedges", np.linspace(b.ymin, b.ymax, self.K + 1))

    @property
    def n_cells(self) -> int:
        return self.K * self.K

    @property
    def cell_size(self) -> tuple[float, float]:
        return self.bbox.width / self.K, self.bbox.height / self.K

    def locate_cells(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if not np.all(self.bbox.contains(xy)):
            raise ValueError("point outside the grid bounding box")
        col = _bin(self.xedges, xy[:, 0])
        row = _bin(self.yedges, xy[:, 1])
        return row * self.K + col

    def cell_rect(self, cell: int) -> tuple[float, float, float, float]:
        row, col = divmod(int(cell), self.K)
        return (self.xedges[col], self.yedges[row], self.xedges[col + 1], self.yedges[row + 1])


class TwoLayerGrid:
    """Leaves of a two-layer grid, indexed by state id ``0..m-1``."""

    def __init__(self, first: FirstLayerGrid, kappa=None):
        self.first = first
        n = first.n_cells
        kappa = np.ones(n, dtype=np.int64) if kappa is None else np.asarray(kappa, dtype=np.int64)
        if kappa.shape != (n,) or np.any(kappa < 1):
            raise ValueError("kappa must hold one positive integer per first-layer cell")
        self.kappa = kappa
        self.kappa.setflags(write=False)
        leaves = kappa * kappa
        self.offset = np.concatenate(([0], np.cumsum(leaves)))
        self.m = int(self.offset[-1])
        self._sub_edges = {}
        rects = np.empty((self.m, 4))
        parent = np.empty(self.m, dtype=np.int64)
        for cell in range(n):
            x0, y0, x1, y1 = first.cell_rect(cell)
            k = int(kappa[cell])
            start = self.offset[cell]
            parent[start : start + k * k] = cell
            if k == 1:
                rects[start] = (x0, y0, x1, y1)
                continue
            sx, sy = np.linspace(x0, x1, k + 1), np.linspace(y0, y1, k + 1)
            self._sub_edges[cell] = (sx, sy)
            r, c = np.divmod(np.arange(k * k), k)
            rects[start : start + k * k] = np.column_stack((sx[c], sy[r], sx[c + 1], sy[r + 1]))
        rects.setflags(write=False)
        parent.setflags(write=False)
        self.rects = rects
        self.parent = parent

    @property
    def bbox(self) -> BBox:
        return self.first.bbox

    @property
    def K(self) -> int:
        return self.first.K

    @property
    def expanded_cells(self) -> list[int]:
        return sorted(self._sub_edges)

    def centroids(self) -> np.ndarray:
        return np.column_stack(((self.rects[:, 0] + self.rects[:, 2]) / 2, (self.rects[:, 1] + self.rects[:, 3]) / 2))

    def locate_states(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        cells = self.first.locate_cells(xy)
        states = self.offset[cells].copy()
        for cell, (sx, sy) in self._sub_edges.items():
            sel = np.flatnonzero(cells == cell)
            if len(sel) == 0:
                continue
            k = len(sx) - 1
            states[sel] += _bin(sy, xy[sel, 1]) * k + _bin(sx, xy[sel, 0])
        return states

    def export_text(self) -> str:
        lines = [f"{i} {x0!r} {y0!r} {x1!r} {y1!r}" for i, (x0, y0, x1, y1) in enumerate(self.rects.tolist())]
        return "\n".join(lines) + "\n"


def choose_first_layer_K(n_trajectories: int, c: float) -> int:
    if n_trajectories < 1 or not c > 0:
        raise ValueError("need n >= 1 and c > 0")
    return max(2, _round_half_up(math.sqrt(n_trajectories / c)))


def choose_kappa(noisy_density_i: float, K: int, pop: float, denom: float = DEFAULT_KAPPA_DENOM) -> int:
    """Second-layer split factor; values <= 1 mean the cell stays whole."""
    if not denom > 0:
        raise ValueError("kappa denominator must be positive")
    return _round_half_up(math.sqrt(max(float(noisy_density_i), 0.0) * K * pop / denom))


def _collapse(states: np.ndarray, seq_id: np.ndarray) -> np.ndarray:
    """Mask of positions that start a run of equal values within a sequence."""
    keep = np.ones(len(states), dtype=bool)
    keep[1:] = (states[1:] != states[:-1]) | (seq_id[1:] != seq_id[:-1])
    return keep


def normalized_density(dataset: TrajectoryDataset, grid: FirstLayerGrid) -> np.ndarray:
    """Per-cell visit counts, each trajectory normalised to total mass one.

    A visit is a maximal run of consecutive points in the same cell.
    """
    out = np.zeros(grid.n_cells)
    if len(dataset) == 0:
        return out
    offsets = dataset.offsets()
    seq_id = np.repeat(np.arange(len(dataset)), np.diff(offsets))
    cells = grid.locate_cells(dataset.all_points())
    keep = _collapse(cells, seq_id)
    visits = np.bincount(seq_id[keep], minlength=len(dataset))
    weights = 1.0 / visits[seq_id[keep]]
    out += np.bincount(cells[keep], weights=weights, minlength=grid.n_cells)
    return out


def add_density_noise(density: np.ndarray, epsilon1: float, rng: Rng) -> np.ndarray:
    scale = noise_scale(1.0, epsilon1)
    return np.asarray(density, dtype=float) + laplace_noise(scale, len(density), rng)


def build_two_layer_grid(
    dataset: TrajectoryDataset,
    K: int,
    epsilon1: float,
    pop: float,
    rng: Rng,
    kappa_denom: float = DEFAULT_KAPPA_DENOM,
    second_layer: bool = True,
) -> tuple[TwoLayerGrid, np.ndarray]:
    first = FirstLayerGrid(dataset.bbox, K)
    noisy = add_density_noise(normalized_density(dataset, first), epsilon1, rng)
    kappa = np.ones(first.n_cells, dtype=np.int64)
    if second_layer:
        for i, d in enumerate(noisy):
            k = choose_kappa(d, K, pop, kappa_denom)
            if k >= 2:
                kappa[i] = k
    return TwoLayerGrid(first, kappa), noisy


def locate_state(p: Point, grid: TwoLayerGrid) -> int:
    return int(grid.locate_states(np.array([p], dtype=float))[0])


def trajectory_to_states(t, grid: TwoLayerGrid) -> np.ndarray:
    states = grid.locate_states(t)
    keep = np.ones(len(states), dtype=bool)
    keep[1:] = states[1:] != states[:-1]
    return states[keep]


def dataset_to_states(dataset: TrajectoryDataset, grid: TwoLayerGrid) -> list[np.ndarray]:
    """Collapsed state sequence for every trajectory (vectorised over the dataset)."""
    if len(dataset) == 0:
        return []
    offsets = dataset.offsets()
    seq_id = np.repeat(np.arange(len(dataset)), np.diff(offsets))
    states = grid.locate_states(dataset.all_points())
    keep = _collapse(states, seq_id)
    kept_states = states[keep]
    bounds = np.concatenate(([0], np.cumsum(np.bincount(seq_id[keep], minlength=len(dataset)))))
    return [kept_states[bounds[i] : bounds[i + 1]] for i in range(len(dataset))]
