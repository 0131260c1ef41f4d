"""Seeded toy worlds: ground-truth Markov chains on a coarse grid, sampled into
point trajectories for desk-scale experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BBox, Rng, TrajectoryDataset

MAX_WALK = 50


@dataclass(frozen=True)
class ToyWorldSpec:
    """Ground-truth chain over ``g*g`` cells.

    ``transitions`` has shape ``(g*g + 1, g*g + 1)``: rows are cells then START
    (last row), columns are cells then END (last column). ``second_order``
    overrides the next-cell distribution for selected ``(previous, current)``
    cell pairs.
    """

    name: str
    bbox: BBox
    g: int
    transitions: np.ndarray
    n_trajectories: int = 5000
    points_per_visit: int = 1
    second_order: dict = field(default_factory=dict)
    pop: float = 20000.0

    def __post_init__(self):
        if self.g < 2:
            raise ValueError("toy grid needs g >= 2")
        n = self.g * self.g
        tr = np.asarray(self.transitions, dtype=float)
        if tr.shape != (n + 1, n + 1):
            raise ValueError(f"transition matrix must be {(n + 1, n + 1)}")
        _check_rows(tr, "transition")
        for key, row in self.second_order.items():
            _check_rows(np.asarray(row, dtype=float)[None, :], f"second-order row {key}")
            if np.shape(row) != (n + 1,):
                raise ValueError(f"second-order row {key} has the wrong length")
        if self.points_per_visit < 1 or self.n_trajectories < 1:
            raise ValueError("points_per_visit and n_trajectories must be positive")

    @property
    def n_cells(self) -> int:
        return self.g * self.g

    def cell_rect(self, cell: int) -> tuple[float, float, float, float]:
        row, col = divmod(cell, self.g)
        w, h = self.bbox.width / self.g, self.bbox.height / self.g
        return (
            self.bbox.xmin + col * w,
            self.bbox.ymin + row * h,
            self.bbox.xmin + (col + 1) * w,
            self.bbox.ymin + (row + 1) * h,
        )

    def with_size(self, n: int) -> "ToyWorldSpec":
        from dataclasses import replace

        return replace(self, n_trajectories=n)


def _check_rows(rows: np.ndarray, what: str) -> None:
    if np.any(rows < 0) or not np.all(np.isfinite(rows)):
        raise ValueError(f"{what} rows must be finite and non-negative")
    bad = np.flatnonzero(np.abs(rows.sum(axis=1) - 1.0) > 1e-9)
    if len(bad):
        raise ValueError(f"{what} row {int(bad[0])} does not sum to 1")


def sample_cell_walks(spec: ToyWorldSpec, rng: Rng, n: int | None = None) -> list[list[int]]:
    n = spec.n_trajectories if n is None else n
    cells = spec.n_cells
    end = cells
    cdf = np.cumsum(spec.transitions, axis=1)
    cdf2 = {k: np.cumsum(v) for k, v in spec.second_order.items()}

    def draw(c):
        return min(int(np.searchsorted(c, rng.uniform() * c[-1], side="right")), len(c) - 1)

    walks = []
    for _ in range(n):
        cur = draw(cdf[cells])
        while cur == end:  # START row mass on END is ignored
            cur = draw(cdf[cells])
        walk = [cur]
        prev = None
        while len(walk) < MAX_WALK:
            row = cdf2.get((prev, cur), cdf[cur])
            nxt = draw(row)
            if nxt == end:
                break
            walk.append(nxt)
            prev, cur = cur, nxt
        walks.append(walk)
    return walks


def generate_toy_dataset(spec: ToyWorldSpec, rng: Rng) -> TrajectoryDataset:
    walks = sample_cell_walks(spec, rng.substream("walks"))
    pts_rng = rng.substream("points")
    rects = np.array([spec.cell_rect(c) for c in range(spec.n_cells)])
    trajs = []
    for walk in walks:
        cells = np.repeat(np.asarray(walk), spec.points_per_visit)
        r = rects[cells]
        u = pts_rng.uniform((len(cells), 2))
        trajs.append(np.column_stack((r[:, 0] + u[:, 0] * (r[:, 2] - r[:, 0]), r[:, 1] + u[:, 1] * (r[:, 3] - r[:, 1]))))
    return TrajectoryDataset(tuple(trajs), spec.bbox)


# ---------------------------------------------------------------- builtin worlds


def _cell(g, row, col):
    return row * g + col


def _normalise(row: np.ndarray) -> np.ndarray:
    return row / row.sum()


def _corridor(g: int = 6) -> ToyWorldSpec:
    n = g * g
    tr = np.zeros((n + 1, n + 1))
    start_rows = np.array([0.04, 0.08, 0.38, 0.38, 0.08, 0.04])
    for r in range(g):
        tr[n, _cell(g, r, 0)] = start_rows[r]
    for r in range(g):
        for c in range(g):
            i = _cell(g, r, c)
            if c == g - 1:
                tr[i, n] = 1.0
                continue
            tr[i, _cell(g, r, c + 1)] = 0.84
            tr[i, _cell(g, min(r + 1, g - 1), c)] += 0.08 if r < g - 1 else 0.0
            tr[i, _cell(g, max(r - 1, 0), c)] += 0.08 if r > 0 else 0.0
            tr[i] = _normalise(tr[i])
    return ToyWorldSpec("corridor", BBox(0.0, 0.0, 6.0, 6.0), g, tr, pop=20000.0)


def _two_cluster(g: int = 6) -> ToyWorldSpec:
    n = g * g
    tr = np.zeros((n + 1, n + 1))
    a = [_cell(g, r, c) for r in (0, 1) for c in (0, 1)]
    b = [_cell(g, r, c) for r in (4, 5) for c in (4, 5)]
    for cell in a + b:
        tr[n, cell] = 1.0
    tr[n] = _normalise(tr[n])

    def neighbours(i):
        r, c = divmod(i, g)
        out = []
        for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < g and 0 <= cc < g:
                out.append(_cell(g, rr, cc))
        return out

    for i in range(n):
        r, c = divmod(i, g)
        nb = neighbours(i)
        if i in a or i in b:
            home = a if i in a else b
            for j in nb:
                tr[i, j] = 3.0 if j in home else 1.0
            tr[i, n] = 1.5
        else:
            # between clusters: drift along the diagonal towards whichever end is nearer to exit
            for j in nb:
                jr, jc = divmod(j, g)
                tr[i, j] = 2.0 if (jr + jc) > (r + c) else 1.0
            tr[i, n] = 0.4
        tr[i] = _normalise(tr[i])
    return ToyWorldSpec("two_cluster", BBox(0.0, 0.0, 6.0, 6.0), g, tr, pop=20000.0)


def _ring_cells(g: int) -> list[int]:
    top = [(0, c) for c in range(g)]
    right = [(r, g - 1) for r in range(1, g)]
    bottom = [(g - 1, c) for c in range(g - 2, -1, -1)]
    left = [(r, 0) for r in range(g - 2, 0, -1)]
    return [_cell(g, r, c) for r, c in top + right + bottom + left]


def _ring(g: int = 6) -> ToyWorldSpec:
    n = g * g
    tr = np.zeros((n + 1, n + 1))
    ring = _ring_cells(g)
    for cell in ring:
        tr[n, cell] = 1.0 / len(ring)
    for k, cell in enumerate(ring):
        tr[cell, ring[(k + 1) % len(ring)]] = 0.98
        tr[cell, n] = 0.02
    inner = set(range(n)) - set(ring)
    for cell in inner:
        tr[cell, n] = 1.0
    return ToyWorldSpec("ring", BBox(0.0, 0.0, 6.0, 6.0), g, tr, pop=20000.0)


def _crossing(g: int = 6, lane_change: float = 0.14) -> ToyWorldSpec:
    """Two two-lane flows (left to right on rows 2-3, bottom to top on columns
    2-3) that share a 2x2 junction block.

    Outside the block walkers move forward or switch lane. Inside it they go
    straight on, so the next cell depends on where the walker came from, which
    a first-order chain cannot express.
    """
    n = g * g
    lanes = (2, 3)
    tr = np.zeros((n + 1, n + 1))
    for lane in lanes:
        tr[n, _cell(g, lane, 0)] = 0.25
        tr[n, _cell(g, 0, lane)] = 0.25
    other = {lanes[0]: lanes[1], lanes[1]: lanes[0]}
    second = {}
    for i in range(n):
        r, c = divmod(i, g)
        in_h, in_v = r in lanes, c in lanes
        if in_h and in_v:
            right = _cell(g, r, c + 1)
            up = _cell(g, r + 1, c)
            tr[i, right] = tr[i, up] = 0.5
            second[(_cell(g, r, c - 1), i)] = _point_row(n, right)
            second[(_cell(g, r - 1, c), i)] = _point_row(n, up)
        elif in_h:
            if c == g - 1:
                tr[i, n] = 1.0
            else:
                tr[i, _cell(g, r, c + 1)] = 1.0 - lane_change
                tr[i, _cell(g, other[r], c)] = lane_change
        elif in_v:
            if r == g - 1:
                tr[i, n] = 1.0
            else:
                tr[i, _cell(g, r + 1, c)] = 1.0 - lane_change
                tr[i, _cell(g, r, other[c])] = lane_change
        else:
            tr[i, n] = 1.0  # never entered
    return ToyWorldSpec("crossing", BBox(0.0, 0.0, 6.0, 6.0), g, tr, second_order=second, pop=20000.0)


def _point_row(n: int, target: int) -> np.ndarray:
    row = np.zeros(n + 1)
    row[target] = 1.0
    return row


_BUILTIN = {"corridor": _corridor, "two_cluster": _two_cluster, "ring": _ring, "crossing": _crossing}

BUILTIN_WORLDS = tuple(_BUILTIN)


def builtin_world(name: str) -> ToyWorldSpec:
    try:
        return _BUILTIN[name]()
    except KeyError:
        raise ValueError(f"unknown toy world {name!r}; choose from {', '.join(_BUILTIN)}") from None


def distinguishing_patterns(spec: ToyWorldSpec) -> list[tuple[int, int, int]]:
    """Cell triples whose frequency depends on second-order behaviour.

    For every overridden context ``(p, c)`` this lists the triple it prescribes
    and the triples prescribed for the other contexts of ``c`` (which the true
    world never produces after ``p``).
    """
    if not spec.second_order:
        raise ValueError("world has no second-order context")
    target = {ctx: int(np.argmax(row)) for ctx, row in spec.second_order.items()}
    out = set()
    for (p, c) in target:
        for (p2, c2), nxt in target.items():
            if c2 == c:
                out.add((p, c, nxt))
    return sorted(out)
