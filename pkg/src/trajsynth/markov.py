"""Length-normalised first/second-order transition counts with virtual start/end
states, Laplace noise and NormCut post-processing.

Rows are stored as dense vectors over targets ``0..m-1`` plus ``END`` at
index ``m``; contexts are tuples of state ids where ``START`` may appear.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Rng, laplace_noise, noise_scale

START = -1
END = -2


def _name(s: int) -> str:
    return "START" if s == START else "END" if s == END else str(s)


@dataclass(frozen=True)
class MarkovModel:
    order: int
    m: int
    rows: dict = field(repr=False)
    noised: bool = False
    normcut_applied: bool = False
    epsilon: float | None = None

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("only first- and second-order models are supported")
        for ctx, row in self.rows.items():
            if len(ctx) != self.order or row.shape != (self.m + 1,):
                raise ValueError(f"malformed row for context {ctx}")
            row.setflags(write=False)

    @property
    def end_index(self) -> int:
        return self.m

    def row(self, context) -> np.ndarray | None:
        return self.rows.get(_ctx(context))

    def total(self) -> float:
        return float(sum(r.sum() for r in self.rows.values()))

    def as_dict(self) -> dict:
        """Nonzero entries keyed by full transition tuple (targets use ``END``)."""
        out = {}
        for ctx, row in self.rows.items():
            for j in np.flatnonzero(row):
                out[ctx + (END if j == self.m else int(j),)] = float(row[j])
        return out

    def dump_text(self) -> str:
        lines = []
        for ctx in sorted(self.rows):
            row = self.rows[ctx]
            left = ",".join(_name(s) for s in ctx)
            for j in np.flatnonzero(row):
                tgt = "END" if j == self.m else str(j)
                lines.append(f"{left} -> {tgt}: {float(row[j])!r}")
        return "\n".join(lines) + "\n"


def _ctx(context) -> tuple:
    if isinstance(context, (int, np.integer)):
        return (int(context),)
    return tuple(int(c) for c in context)


def augment(seq) -> tuple:
    seq = [int(s) for s in seq]
    if not seq:
        raise ValueError("cannot augment an empty state sequence")
    return (START, *seq, END)


def count_transitions(sequences, order: int, m: int) -> MarkovModel:
    """Length-normalised transition counts.

    Each contiguous window of ``order + 1`` states in an augmented sequence of
    length ``|T|`` adds ``1/|T|`` to its count.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    seqs = [tuple(s) for s in sequences]
    if not seqs:
        return MarkovModel(order, m, {})
    for s in seqs:
        if len(s) < 3 or s[0] != START or s[-1] != END:
            raise ValueError("sequences must be augmented with START and END")
    # unified alphabet: states 0..m-1, START -> m, END -> m + 1
    lens = np.fromiter((len(s) for s in seqs), dtype=np.int64, count=len(seqs))
    flat = np.fromiter(itertools.chain.from_iterable(seqs), dtype=np.int64, count=int(lens.sum()))
    flat = np.where(flat == START, m, np.where(flat == END, m + 1, flat))
    if np.any((flat < 0) | (flat > m + 1)):
        raise ValueError("state id out of range")
    seq_id = np.repeat(np.arange(len(seqs)), lens)
    w = (1.0 / lens)[seq_id]
    n = len(flat) - order
    valid = seq_id[:n] == seq_id[order:]
    pos = np.flatnonzero(valid)
    tgt = flat[pos + order]
    tgt = np.where(tgt == m + 1, m, tgt)
    a = flat[pos]
    ctx_key = a if order == 1 else a * (m + 2) + flat[pos + 1]
    keys, inv = np.unique(ctx_key, return_inverse=True)
    table = np.zeros((len(keys), m + 1))
    np.add.at(table, (inv, tgt), w[pos])
    rows = {}
    for i, k in enumerate(keys.tolist()):
        parts = (k,) if order == 1 else divmod(k, m + 2)
        ctx = tuple(START if p == m else int(p) for p in parts)
        rows[ctx] = table[i]
    return MarkovModel(order, m, rows)


def count_from_states(state_seqs, order: int, m: int) -> MarkovModel:
    return count_transitions([augment(s) for s in state_seqs], order, m)


def _noise_contexts(model: MarkovModel, dense_order2: bool) -> list[tuple]:
    m = model.m
    if model.order == 1:
        return [(START,)] + [(s,) for s in range(m)]
    if dense_order2:
        firsts = [START] + list(range(m))
        return [(a, b) for a in firsts for b in range(m)]
    return sorted(ctx for ctx, row in model.rows.items() if row.sum() > 0)


def add_model_noise(model: MarkovModel, epsilon: float, rng: Rng, dense_order2: bool = False) -> MarkovModel:
    """Laplace noise of scale ``1/epsilon`` (the counts have L1 sensitivity 1).

    First order materialises the full ``(m+1) x (m+1)`` table. Second order
    perturbs only contexts present in the raw table unless ``dense_order2``.
    """
    if model.noised:
        raise ValueError("model has already been noised")
    scale = noise_scale(1.0, epsilon)
    rows = {}
    zero = np.zeros(model.m + 1)
    for ctx in _noise_contexts(model, dense_order2):
        base = model.rows.get(ctx, zero)
        rows[ctx] = base + laplace_noise(scale, model.m + 1, rng)
    return MarkovModel(model.order, model.m, rows, noised=True, epsilon=float(epsilon))


def normcut(row) -> np.ndarray:
    """Remove negative mass from the smallest positive entries upward, then zero negatives.

    Ties between equal positive entries are consumed lowest index first.
    """
    v = np.array(row, dtype=float)
    neg = v < 0
    deficit = -v[neg].sum()
    v[neg] = 0.0
    if deficit == 0:
        return v
    pos = np.flatnonzero(v > 0)
    if len(pos) == 0:
        return v
    order = pos[np.argsort(v[pos], kind="stable")]
    csum = np.cumsum(v[order])
    k = int(np.searchsorted(csum, deficit, side="left"))
    if k >= len(order):
        v[order] = 0.0
        return v
    v[order[:k]] = 0.0
    v[order[k]] = csum[k] - deficit
    return v


def _structural_mask(ctx: tuple, m: int) -> list[int]:
    """Target indices that no real trajectory can produce from ``ctx``."""
    last = ctx[-1]
    if last == START:
        return [m]  # START -> END: trajectories are non-empty
    if len(ctx) == 2 and ctx[0] == ctx[1]:
        return list(range(m + 1))  # collapsed sequences never repeat a state
    return [last]


def postprocess(model: MarkovModel) -> MarkovModel:
    """Zero structurally impossible transitions and apply NormCut to every row."""
    rows = {}
    for ctx, row in model.rows.items():
        r = np.array(row, dtype=float)
        r[_structural_mask(ctx, model.m)] = 0.0
        rows[ctx] = normcut(r)
    return replace(model, rows=rows, normcut_applied=True)


def privatize(model: MarkovModel, epsilon: float, rng: Rng, dense_order2: bool = False) -> MarkovModel:
    return postprocess(add_model_noise(model, epsilon, rng, dense_order2=dense_order2))


def transition_distribution(model: MarkovModel, context) -> np.ndarray | None:
    """Row normalised to a distribution over ``0..m-1, END``; ``None`` when undefined."""
    row = model.row(context)
    if row is None:
        return None
    total = row.sum()
    if not total > 0 or not math.isfinite(total):
        return None
    return row / total


def start_counts(model: MarkovModel) -> np.ndarray:
    """Counts of START -> i for each real state ``i``."""
    if model.order != 1:
        raise ValueError("start counts come from the first-order model")
    row = model.row((START,))
    return np.zeros(model.m) if row is None else np.array(row[: model.m])


def end_counts(model: MarkovModel) -> np.ndarray:
    """Counts of j -> END for each real state ``j``."""
    if model.order != 1:
        raise ValueError("end counts come from the first-order model")
    q = np.zeros(model.m)
    for (s,), row in model.rows.items():
        if s != START:
            q[s] = row[model.m]
    return q
