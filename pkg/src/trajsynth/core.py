"""Shared domain types, seeded randomness, budget splitting and Laplace noise."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

DEFAULT_RATIOS = (0.2, 0.4, 0.4)

_U53 = float(2**53)


class Point(NamedTuple):
    x: float
    y: float


class BBox(NamedTuple):
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return (
            (xy[:, 0] >= self.xmin)
            & (xy[:, 0] <= self.xmax)
            & (xy[:, 1] >= self.ymin)
            & (xy[:, 1] <= self.ymax)
        )


def as_trajectory(points) -> np.ndarray:
    """Coerce a sequence of (x, y) pairs to a read-only ``(n, 2)`` float array."""
    arr = np.array(points, dtype=float).reshape(-1, 2)
    if len(arr) == 0:
        raise ValueError("trajectory must contain at least one point")
    if not np.all(np.isfinite(arr)):
        raise ValueError("trajectory contains non-finite coordinates")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TrajectoryDataset:
    """A list of trajectories (each an ``(n, 2)`` array) inside a bounding box."""

    trajectories: tuple
    bbox: BBox

    def __post_init__(self):
        trajs = tuple(as_trajectory(t) for t in self.trajectories)
        object.__setattr__(self, "trajectories", trajs)
        bbox = BBox(*map(float, self.bbox))
        object.__setattr__(self, "bbox", bbox)
        if not (bbox.xmin < bbox.xmax and bbox.ymin < bbox.ymax):
            raise ValueError(f"degenerate bounding box {tuple(bbox)}")
        for i, t in enumerate(trajs):
            if not np.all(bbox.contains(t)):
                raise ValueError(f"trajectory {i} has points outside the bounding box")

    @classmethod
    def from_points(cls, trajectories: Sequence, bbox=None, margin: float = 0.0):
        """Build a dataset, deriving the bounding box from the data when not given."""
        trajs = [as_trajectory(t) for t in trajectories]
        if bbox is None:
            if not trajs:
                raise ValueError("cannot infer a bounding box from an empty dataset")
            allp = np.concatenate(trajs)
            lo, hi = allp.min(axis=0), allp.max(axis=0)
            span = np.maximum(hi - lo, 1e-9)
            lo, hi = lo - margin * span, hi + margin * span
            # keep a positive extent for collinear data
            hi = np.where(hi > lo, hi, lo + 1.0)
            bbox = BBox(lo[0], lo[1], hi[0], hi[1])
        return cls(tuple(trajs), bbox)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def all_points(self) -> np.ndarray:
        if not self.trajectories:
            return np.empty((0, 2))
        return np.concatenate(self.trajectories)

    def offsets(self) -> np.ndarray:
        """Start offsets of each trajectory in :meth:`all_points` (length ``n + 1``)."""
        lens = np.fromiter((len(t) for t in self.trajectories), dtype=np.int64, count=len(self))
        return np.concatenate(([0], np.cumsum(lens)))


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon_total: float
    epsilon1: float
    epsilon2: float
    epsilon3: float

    def __post_init__(self):
        parts = (self.epsilon1, self.epsilon2, self.epsilon3)
        if not all(e > 0 for e in parts) or not self.epsilon_total > 0:
            raise ValueError("all privacy budgets must be positive")
        if math.isinf(self.epsilon_total):
            if not all(math.isinf(e) for e in parts):
                raise ValueError("an infinite total budget needs infinite parts")
            return
        total = math.fsum(parts)
        if abs(total - self.epsilon_total) > 1e-12 * self.epsilon_total:
            raise ValueError(f"budget parts sum to {total}, expected {self.epsilon_total}")

    @property
    def noise_disabled(self) -> bool:
        return math.isinf(self.epsilon_total)

    def ledger(self) -> dict:
        return {
            "epsilon_total": self.epsilon_total,
            "epsilon1_discretization": self.epsilon1,
            "epsilon2_first_order": self.epsilon2,
            "epsilon3_second_order": self.epsilon3,
        }


def split_budget(epsilon_total: float, ratios: Sequence[float] = DEFAULT_RATIOS) -> PrivacyBudget:
    """Split ``epsilon_total`` proportionally across the three noisy stages.

    The last share is computed as the remainder so the parts add up to the
    total. ``epsilon_total = inf`` gives a noise-free budget.
    """
    r1, r2, r3 = (float(r) for r in ratios)
    if min(r1, r2, r3) <= 0:
        raise ValueError("budget ratios must be positive")
    if abs(r1 + r2 + r3 - 1.0) > 1e-9:
        raise ValueError(f"budget ratios must sum to 1, got {r1 + r2 + r3}")
    if not epsilon_total > 0:
        raise ValueError("epsilon must be positive")
    if math.isinf(epsilon_total):
        return PrivacyBudget(math.inf, math.inf, math.inf, math.inf)
    e1 = r1 * epsilon_total
    e2 = r2 * epsilon_total
    e3 = epsilon_total - e1 - e2
    if abs((e1 + e2 + e3) - epsilon_total) > 1e-12 * epsilon_total:
        e3 = r3 * epsilon_total
    return PrivacyBudget(float(epsilon_total), e1, e2, e3)


def _derive_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class Rng:
    """Seeded generator with named, independent substreams."""

    seed: int
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.seed = int(self.seed) & (2**64 - 1)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def substream(self, name: str) -> "Rng":
        return Rng(_derive_seed(self.seed, name))

    def open_uniform(self, size=None) -> np.ndarray | float:
        """Uniform draws strictly inside (0, 1)."""
        k = self.gen.integers(0, 2**53, size=size)
        return (k + 0.5) / _U53

    def uniform(self, size=None):
        return self.gen.random(size)


def _laplace_icdf(u, scale):
    # -b*sgn(u-1/2)*ln(1-2|u-1/2|), split by branch so small u keeps its precision
    u = np.asarray(u, dtype=float)
    return np.where(u < 0.5, scale * np.log(2.0 * np.minimum(u, 0.5)), -scale * np.log(2.0 * (1.0 - np.maximum(u, 0.5))))


def laplace_sample(scale: float, rng: Rng | None = None, u: float | None = None) -> float:
    """Zero-mean Laplace variate by inverse CDF of one uniform draw.

    ``u`` forces the uniform (used by tests); otherwise it is drawn from ``rng``.
    """
    if not scale > 0 or math.isinf(scale):
        raise ValueError(f"Laplace scale must be positive and finite, got {scale}")
    if u is None:
        if rng is None:
            raise ValueError("need an rng or a forced uniform")
        u = rng.open_uniform()
    if not 0.0 < u < 1.0:
        raise ValueError("forced uniform must lie in (0, 1)")
    return float(_laplace_icdf(float(u), scale))


def laplace_noise(scale: float, size, rng: Rng) -> np.ndarray:
    """Vectorised :func:`laplace_sample`; ``scale == 0`` returns zeros without drawing."""
    if scale == 0:
        return np.zeros(size)
    if not scale > 0 or math.isinf(scale):
        raise ValueError(f"Laplace scale must be positive and finite, got {scale}")
    return _laplace_icdf(rng.open_uniform(size), scale)


def noise_scale(sensitivity: float, epsilon: float) -> float:
    """Laplace scale for a query; infinite epsilon means no noise."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return 0.0 if math.isinf(epsilon) else sensitivity / epsilon


def trajectory_length(t) -> float:
    t = np.asarray(t, dtype=float).reshape(-1, 2)
    if len(t) < 2:
        return 0.0
    return float(np.hypot(*np.diff(t, axis=0).T).sum())


def trajectory_diameter(t) -> float:
    t = np.asarray(t, dtype=float).reshape(-1, 2)
    if len(t) < 2:
        return 0.0
    # only hull vertices can realise the diameter, but trajectories are short
    # enough that chunked brute force is cheaper than building a hull
    best = 0.0
    for start in range(0, len(t), 512):
        block = t[start : start + 512]
        d = np.hypot(block[:, None, 0] - t[None, :, 0], block[:, None, 1] - t[None, :, 1])
        best = max(best, float(d.max()))
    return best
