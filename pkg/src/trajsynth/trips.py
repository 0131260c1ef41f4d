"""Trip-distribution estimation: state adjacency graph, shortest-path node
counts, and a simplex-constrained least-squares fit of start/end counts.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numpy as np

from .discretization import TwoLayerGrid

log = logging.getLogger(__name__)

_WEIGHT_RTOL = 1e-9


@dataclass(frozen=True)
class StateGraph:
    m: int
    edges: np.ndarray  # (E, 2) with i < j
    weights: np.ndarray  # (E,)

    def adjacency(self) -> list[list[tuple[int, float]]]:
        adj = [[] for _ in range(self.m)]
        for (i, j), w in zip(self.edges.tolist(), self.weights.tolist()):
            adj[i].append((j, w))
            adj[j].append((i, w))
        for nbrs in adj:
            nbrs.sort()
        return adj


def build_state_graph(grid: TwoLayerGrid) -> StateGraph:
    """Connect leaves whose closed rectangles touch (edge or corner)."""
    r = grid.rects
    x0, y0, x1, y1 = r[:, 0], r[:, 1], r[:, 2], r[:, 3]
    touch = (
        (x0[:, None] <= x1[None, :])
        & (x0[None, :] <= x1[:, None])
        & (y0[:, None] <= y1[None, :])
        & (y0[None, :] <= y1[:, None])
    )
    i, j = np.nonzero(np.triu(touch, k=1))
    c = grid.centroids()
    w = np.hypot(c[i, 0] - c[j, 0], c[i, 1] - c[j, 1])
    return StateGraph(grid.m, np.column_stack((i, j)).astype(np.int64), w)


def _better(w, n, best_w, best_n) -> bool:
    if best_w == np.inf:
        return True
    tol = _WEIGHT_RTOL * max(abs(w), abs(best_w), 1.0)
    if w < best_w - tol:
        return True
    return abs(w - best_w) <= tol and n < best_n


def _dijkstra_counts(adj, source: int) -> np.ndarray:
    m = len(adj)
    dist = np.full(m, np.inf)
    count = np.full(m, np.inf)
    done = np.zeros(m, dtype=bool)
    dist[source], count[source] = 0.0, 1
    heap = [(0.0, 1, source)]
    while heap:
        d, c, u = heapq.heappop(heap)
        if done[u] or d != dist[u] or c != count[u]:
            continue
        done[u] = True
        for v, w in adj[u]:
            if done[v]:
                continue
            nd, nc = d + w, c + 1
            if _better(nd, nc, dist[v], count[v]):
                dist[v], count[v] = nd, nc
                heapq.heappush(heap, (nd, nc, v))
    return count


def shortest_path_lengths(graph: StateGraph) -> np.ndarray:
    """Node count of the minimum-weight path between every pair of states.

    Among equal-weight paths the one with fewer nodes wins. The diagonal is 1
    and unreachable pairs are ``inf``.
    """
    adj = graph.adjacency()
    return np.vstack([_dijkstra_counts(adj, s) for s in range(graph.m)]) if graph.m else np.zeros((0, 0))


def project_to_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0, sum(x) = total}``."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, len(u) + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


@dataclass(frozen=True)
class TripMatrix:
    t: np.ndarray
    n_target: float
    iterations: int = 0
    converged: bool = True

    def to_csv(self) -> str:
        return "\n".join(",".join(repr(float(x)) for x in row) for row in self.t) + "\n"


def trip_objective(t: np.ndarray, b, q, inv_l: np.ndarray) -> float:
    wt = t * inv_l
    r = wt.sum(axis=1) - b
    s = wt.sum(axis=0) - q
    return float(r @ r + s @ s)


def estimate_trip_distribution(
    b,
    q,
    l,
    n: float,
    tol: float = 1e-6,
    max_iter: int = 100_000,
    history: list | None = None,
) -> TripMatrix:
    """Fit trips ``t[i, j]`` so that ``t / l`` summed over rows and columns matches ``b`` and ``q``.

    Minimises ``sum_i (sum_j t_ij/l_ij - b_i)^2 + sum_j (sum_i t_ij/l_ij - q_j)^2``
    over ``t >= 0`` with ``sum(t) = n`` by projected gradient with a
    Barzilai-Borwein trial step and backtracking, so accepted objectives never
    increase. Pairs with infinite ``l`` are held at zero. Stops when the
    projected-gradient residual (sup norm) drops to ``tol * n``.
    """
    b = np.maximum(np.asarray(b, dtype=float), 0.0)
    q = np.maximum(np.asarray(q, dtype=float), 0.0)
    l = np.asarray(l, dtype=float)
    m = len(b)
    if l.shape != (m, m) or q.shape != (m,):
        raise ValueError("shape mismatch between b, q and l")
    if not n > 0:
        raise ValueError("trip total must be positive")
    reach = np.isfinite(l) & (l > 0)
    if not reach.any():
        raise ValueError("no reachable state pairs")
    inv_l = np.where(reach, 1.0 / np.where(reach, l, 1.0), 0.0)
    idx = np.flatnonzero(reach.ravel())
    w = inv_l.ravel()[idx]
    rows, cols = np.divmod(idx, m)

    def f_grad(x):
        wx = w * x
        r = np.bincount(rows, wx, minlength=m) - b
        s = np.bincount(cols, wx, minlength=m) - q
        return r @ r + s @ s, 2.0 * w * (r[rows] + s[cols])

    x = np.full(len(idx), n / len(idx))
    fx, g = f_grad(x)
    step = 1.0
    it = 0
    converged = False
    if history is not None:
        history.append(fx)
    for it in range(1, max_iter + 1):
        resid = np.abs(x - project_to_simplex(x - g, n)).max()
        if resid <= tol * n:
            converged = True
            break
        alpha = step
        while True:
            x_new = project_to_simplex(x - alpha * g, n)
            f_new, g_new = f_grad(x_new)
            if f_new <= fx - 1e-4 * (g @ (x - x_new)) or alpha < 1e-16:
                break
            alpha *= 0.5
        if f_new > fx:
            break
        sx, sg = x_new - x, g_new - g
        sy = sx @ sg
        step = float(np.clip((sx @ sx) / sy, 1e-12, 1e12)) if sy > 0 else 1.0
        x, fx, g = x_new, f_new, g_new
        if history is not None:
            history.append(fx)
    else:
        it = max_iter
    if not converged:
        log.warning("trip estimation stopped after %d iterations without meeting tol", it)
    t = np.zeros(m * m)
    t[idx] = x
    return TripMatrix(t.reshape(m, m), float(n), iterations=it, converged=converged)
