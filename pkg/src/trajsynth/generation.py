"""Random-walk synthesis over privatised Markov models.

Everything here is post-processing: it only accepts models that went through
noise and NormCut, plus the estimated trip matrix.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import Rng, TrajectoryDataset
from .discretization import TwoLayerGrid
from .markov import START, MarkovModel, transition_distribution
from .trips import TripMatrix

MAX_TRIP_RESAMPLES = 100


class ModelChoice(enum.Enum):
    FIRST = "first"
    SECOND = "second"


@dataclass(frozen=True)
class SelectionThresholds:
    theta1: float
    theta2: float = 5.0

    def __post_init__(self):
        if not self.theta1 > 0:
            raise ValueError("theta1 must be positive")
        if not self.theta2 > 1:
            raise ValueError("theta2 must exceed 1")


def default_thresholds(epsilon2: float, m: int) -> SelectionThresholds:
    """theta1 is the noise standard deviation summed over a row; theta2 is 5."""
    if not epsilon2 > 0 or m < 1:
        raise ValueError("need epsilon2 > 0 and m >= 1")
    if math.isinf(epsilon2):
        # no noise: every count is trustworthy
        return SelectionThresholds(theta1=np.finfo(float).tiny)
    return SelectionThresholds(theta1=math.sqrt(2.0) / epsilon2 * m)


def select_model(first_order_row, thresholds: SelectionThresholds) -> ModelChoice:
    row = np.asarray(first_order_row, dtype=float)
    total = row.sum() if row.size else 0.0
    if total < thresholds.theta1:
        return ModelChoice.FIRST
    top = np.sort(row)[::-1]
    n1 = top[0]
    n2 = top[1] if len(top) > 1 else 0.0
    if n2 <= 0:
        return ModelChoice.FIRST if n1 > 0 else ModelChoice.SECOND
    return ModelChoice.FIRST if n1 / n2 >= thresholds.theta2 else ModelChoice.SECOND


def _require_private(model: MarkovModel, order: int) -> None:
    if model.order != order:
        raise ValueError(f"expected an order-{order} model")
    if not (model.noised and model.normcut_applied):
        raise ValueError("generation only accepts noised, NormCut-processed models")


def sample_trip(trips: TripMatrix, rng: Rng) -> tuple[int, int]:
    t = np.asarray(trips.t, dtype=float)
    cdf = np.cumsum(t.ravel())
    if not cdf.size or not cdf[-1] > 0:
        raise ValueError("trip matrix has no mass")
    k = int(np.searchsorted(cdf, rng.uniform() * cdf[-1], side="right"))
    k = min(k, cdf.size - 1)
    while t.flat[k] <= 0:  # guard against landing on a zero cell at the boundary
        k -= 1
    return divmod(k, t.shape[1])


class WalkSampler:
    """Caches cumulative rows so each step costs one uniform and a binary search."""

    def __init__(self, m1: MarkovModel, m2: MarkovModel | None, thresholds: SelectionThresholds, mode: str = "adaptive"):
        _require_private(m1, 1)
        if m2 is not None:
            _require_private(m2, 2)
        if mode not in ("adaptive", "first", "second"):
            raise ValueError(f"unknown model mode {mode!r}")
        if mode != "first" and m2 is None:
            raise ValueError("second-order model required for this mode")
        self.m1, self.m2 = m1, m2
        self.m = m1.m
        self.end = m1.m
        self.thresholds = thresholds
        self.mode = mode
        self._cdf1: dict = {}
        self._cdf2: dict = {}
        self._choice: dict = {}

    @staticmethod
    def _cdf(model, ctx, cache):
        if ctx not in cache:
            p = transition_distribution(model, ctx)
            cache[ctx] = None if p is None else np.cumsum(p)
        return cache[ctx]

    def first_cdf(self, state: int):
        return self._cdf(self.m1, (state,), self._cdf1)

    def choice(self, state: int) -> ModelChoice:
        if self.mode == "first":
            return ModelChoice.FIRST
        if self.mode == "second":
            return ModelChoice.SECOND
        if state not in self._choice:
            row = self.m1.row((state,))
            self._choice[state] = select_model(np.zeros(1) if row is None else row, self.thresholds)
        return self._choice[state]

    def next_state(self, last: int, now: int, rng: Rng) -> int | None:
        """Sample the successor of ``now``; ``None`` when no distribution exists."""
        cdf = None
        if self.choice(now) is ModelChoice.SECOND:
            cdf = self._cdf(self.m2, (last, now), self._cdf2)
        if cdf is None:
            cdf = self.first_cdf(now)
        if cdf is None:
            return None
        return _draw(cdf, rng)


def _draw(cdf: np.ndarray, rng: Rng) -> int:
    k = int(np.searchsorted(cdf, rng.uniform() * cdf[-1], side="right"))
    return min(k, len(cdf) - 1)


def _walk_from(sampler: WalkSampler, first: int, last: int, rng: Rng, max_len: int) -> list[int]:
    states = [first]
    now = first
    while len(states) < max_len:
        nxt = sampler.next_state(last, now, rng)
        if nxt is None or nxt == sampler.end:
            break
        states.append(nxt)
        last, now = now, nxt
    return states


def random_walk(
    m1: MarkovModel,
    m2: MarkovModel | None,
    trips: TripMatrix | None,
    thresholds: SelectionThresholds,
    rng: Rng,
    max_len: int,
    mode: str = "adaptive",
    sampler: WalkSampler | None = None,
) -> list[int]:
    """Generate one state sequence (no virtual states).

    With a trip matrix, the start state is drawn from it and the first step
    uses the first-order row of that state. Without one, the start comes
    from the first-order START row and the walk continues from context
    ``(START, start)``.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    sampler = sampler or WalkSampler(m1, m2, thresholds, mode)
    if trips is None:
        cdf = sampler.first_cdf(START)
        if cdf is None:
            raise ValueError("first-order START row is empty")
        start = _draw(cdf, rng)
        if start == sampler.end:
            raise ValueError("START row only leads to END")
        return _walk_from(sampler, start, START, rng, max_len)
    for _ in range(MAX_TRIP_RESAMPLES):
        start, _end = sample_trip(trips, rng)  # the end state never steers the walk
        cdf = sampler.first_cdf(start)
        if cdf is None:
            continue
        states = [start]
        if max_len == 1:
            return states
        nxt = _draw(cdf, rng)
        if nxt == sampler.end:
            return states
        states.append(nxt)
        if len(states) < max_len:
            states[1:] = _walk_from(sampler, nxt, start, rng, max_len - 1)
        return states
    raise RuntimeError(f"no trip start with a defined first-order row after {MAX_TRIP_RESAMPLES} draws")


def sample_locations(states, grid: TwoLayerGrid, rng: Rng, u: np.ndarray | None = None) -> np.ndarray:
    """One uniform point inside each state's rectangle; ``u`` forces the quantiles."""
    states = np.asarray(states, dtype=np.int64)
    if states.size == 0:
        raise ValueError("cannot place an empty state sequence")
    r = grid.rects[states]
    if u is None:
        u = rng.uniform((len(states), 2))
    u = np.asarray(u, dtype=float).reshape(len(states), 2)
    x = r[:, 0] + u[:, 0] * (r[:, 2] - r[:, 0])
    y = r[:, 1] + u[:, 1] * (r[:, 3] - r[:, 1])
    return np.column_stack((x, y))


def generate_state_walks(
    m1: MarkovModel,
    m2: MarkovModel | None,
    trips: TripMatrix | None,
    thresholds: SelectionThresholds,
    n_syn: int,
    rng: Rng,
    max_len: int,
    mode: str = "adaptive",
) -> list[list[int]]:
    if n_syn < 1:
        raise ValueError("n_syn must be at least 1")
    sampler = WalkSampler(m1, m2, thresholds, mode)
    return [random_walk(m1, m2, trips, thresholds, rng, max_len, sampler=sampler) for _ in range(n_syn)]


def generate_dataset(
    m1: MarkovModel,
    m2: MarkovModel | None,
    trips: TripMatrix | None,
    grid: TwoLayerGrid,
    thresholds: SelectionThresholds,
    n_syn: int | None,
    rng: Rng,
    max_len: int,
    mode: str = "adaptive",
) -> TrajectoryDataset:
    if n_syn is None:
        if trips is None:
            raise ValueError("n_syn is required without a trip matrix")
        n_syn = int(round(float(np.sum(trips.t))))
    walk_rng = rng.substream("walks")
    point_rng = rng.substream("points")
    walks = generate_state_walks(m1, m2, trips, thresholds, n_syn, walk_rng, max_len, mode)
    trajs = [sample_locations(w, grid, point_rng) for w in walks]
    return TrajectoryDataset(tuple(trajs), grid.bbox)
