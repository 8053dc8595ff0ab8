"""Positive-pair construction: optimal assignment, the greedy baseline, and
the intra-/inter-modal match builders.

``hungarian`` is a shortest-augmenting-path solver (O(n^3)) with dual
potentials. Ties between equal-cost optima are broken deterministically by
re-deriving the lexicographically smallest pair list over the tight-edge
graph of the optimal duals; for wide matrices (more queries than keys) the
problem is solved transposed, so the canonical order there follows key
index first.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diffcore import DiffArray
from .errors import ConfigError, EmptyMatchError, NumericError
from .geometry import CameraModel, SimilarityTransform, bilinear_sample, project
from .sampling import SampledSet


@dataclass
class MatchSet:
    """One-to-one index correspondences between a query set and a key set."""

    pairs: list[tuple[int, int]]
    costs: Optional[np.ndarray]
    kind: str  # "intra" | "inter"

    def __post_init__(self):
        queries = [q for q, _ in self.pairs]
        keys = [k for _, k in self.pairs]
        if len(set(queries)) != len(queries) or len(set(keys)) != len(keys):
            raise ConfigError("match pairs must be one-to-one")
        if self.costs is not None and len(self.costs) != len(self.pairs):
            raise ConfigError("costs must align with pairs")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def query_indices(self) -> np.ndarray:
        return np.array([q for q, _ in self.pairs], dtype=np.intp)

    @property
    def key_indices(self) -> np.ndarray:
        return np.array([k for _, k in self.pairs], dtype=np.intp)

    @property
    def total_cost(self) -> float:
        return float(self.costs.sum()) if self.costs is not None else float("nan")


def _validate_cost(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ConfigError(f"cost must be a non-empty matrix, got shape {cost.shape}")
    bad = ~np.isfinite(cost)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise NumericError(f"non-finite cost at ({i}, {j})")
    neg = cost < 0
    if neg.any():
        i, j = np.argwhere(neg)[0]
        raise NumericError(f"negative cost at ({i}, {j}): {cost[i, j]}")
    return cost


def _solve_square(cost: np.ndarray):
    """Shortest-augmenting-path assignment on a square matrix.

    Returns (row_of_col, u, v): the perfect matching plus dual potentials
    with every assigned edge tight and all reduced costs >= 0 (up to float
    roundoff). The inner column scan is vectorized; the augmentation itself
    is sequential by nature.
    """
    n = cost.shape[0]
    u = np.zeros(n)
    v = np.zeros(n + 1)
    row_of_col = np.full(n + 1, -1, dtype=np.intp)  # col n is the virtual root
    way = np.zeros(n, dtype=np.intp)
    for i in range(n):
        row_of_col[n] = i
        j0 = n
        minv = np.full(n, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            cur = cost[i0, :] - u[i0] - v[:n]
            unused = ~used[:n]
            better = unused & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(unused, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            used_cols = used[:n]
            u[row_of_col[:n][used_cols]] += delta
            u[row_of_col[n]] += delta if used[n] else 0.0
            v[:n][used_cols] -= delta
            v[n] -= delta if used[n] else 0.0
            minv[unused] -= delta
            j0 = j1
            if row_of_col[j0] == -1:
                break
        while j0 != n:
            j_prev = way[j0]
            row_of_col[j0] = row_of_col[j_prev]
            j0 = j_prev
    return row_of_col[:n], u, v[:n]


def _rematch(start_row: int, adjacency: list, row_of_col: np.ndarray,
             col_of_row: np.ndarray, blocked: set) -> bool:
    """BFS for an alternating path rehoming ``start_row``; commits on success."""
    came_from: dict[int, int] = {}
    frontier = [start_row]
    seen_rows = {start_row}
    free_col = -1
    while frontier and free_col < 0:
        nxt = []
        for r in frontier:
            for c in adjacency[r]:
                if c in blocked or c in came_from:
                    continue
                came_from[c] = r
                owner = int(row_of_col[c])
                if owner < 0:
                    free_col = c
                    break
                if owner not in seen_rows:
                    seen_rows.add(owner)
                    nxt.append(owner)
            if free_col >= 0:
                break
        frontier = nxt
    if free_col < 0:
        return False
    c = free_col
    while True:
        r = came_from[c]
        old = int(col_of_row[r])
        row_of_col[c] = r
        col_of_row[r] = c
        if r == start_row:
            break
        c = old
    return True


def _lex_canonical(cost: np.ndarray, u: np.ndarray, v: np.ndarray,
                   row_of_col: np.ndarray, n_rows: int) -> np.ndarray:
    """Smallest pair list among optimal assignments, given optimal duals.

    Optimal assignments are exactly the perfect matchings of the tight-edge
    graph (complementary slackness both ways), so greedily giving each row
    in order the smallest tight column that still admits a completion yields
    the lexicographic minimum.
    """
    n = cost.shape[0]
    tol = 1e-9 * max(1.0, float(np.abs(cost).max()))
    tight = (cost - u[:, None] - v[None, :]) <= tol
    adjacency = [np.flatnonzero(tight[r]).tolist() for r in range(n)]
    col_of_row = np.full(n, -1, dtype=np.intp)
    for j in range(n):
        col_of_row[row_of_col[j]] = j

    blocked: set = set()
    for i in range(n_rows):
        current = int(col_of_row[i])
        for j in adjacency[i]:
            if j in blocked:
                continue
            if j == current:
                break
            if j > current:
                break  # candidates are ascending; current is already minimal
            owner = int(row_of_col[j])
            row_of_col[current] = -1
            row_of_col[j] = i
            col_of_row[i] = j
            col_of_row[owner] = -1
            if _rematch(owner, adjacency, row_of_col, col_of_row, blocked | {j}):
                break
            # revert and try the next candidate
            row_of_col[current] = i
            row_of_col[j] = owner
            col_of_row[i] = current
            col_of_row[owner] = j
        blocked.add(int(col_of_row[i]))
    return col_of_row


def hungarian(cost) -> list[tuple[int, int]]:
    """Globally optimal rectangular assignment, min(r, s) pairs.

    All costs must be finite and non-negative. The result is sorted by query
    index and is the lexicographically smallest pair list among the optima.
    """
    cost = _validate_cost(cost)
    r, s = cost.shape
    transposed = r > s
    work = cost.T if transposed else cost
    wr, ws = work.shape
    if wr < ws:  # pad with zero-cost dummy rows to square
        square = np.vstack([work, np.zeros((ws - wr, ws))])
    else:
        square = work
    row_of_col, u, v = _solve_square(square)
    col_of_row = _lex_canonical(square, u, v, row_of_col.copy(), wr)
    if transposed:
        pairs = sorted((int(col_of_row[i]), i) for i in range(wr))
    else:
        pairs = [(i, int(col_of_row[i])) for i in range(wr)]
    return pairs


def greedy_assign(cost) -> list[tuple[int, int]]:
    """Repeatedly take the globally cheapest remaining cell; ties go to the
    smallest (row, col). The matching-quality baseline, not the default."""
    cost = _validate_cost(cost)
    work = cost.copy()
    r, s = work.shape
    pairs = []
    for _ in range(min(r, s)):
        flat = int(np.argmin(work))  # first minimum in row-major order
        i, j = divmod(flat, s)
        pairs.append((i, j))
        work[i, :] = np.inf
        work[:, j] = np.inf
    return sorted(pairs)


def brute_force_assignment(cost) -> tuple[list[tuple[int, int]], float]:
    """Exhaustive-permutation optimum; verification oracle only (r, s small)."""
    cost = _validate_cost(cost)
    r, s = cost.shape
    best_total = np.inf
    if r <= s:
        rows = range(r)
        best_pairs = None
        for perm in itertools.permutations(range(s), r):
            total = sum(cost[i, perm[i]] for i in rows)
            if total < best_total - 1e-15:
                best_total = total
                best_pairs = [(i, perm[i]) for i in rows]
        return best_pairs, float(best_total)
    pairs, total = brute_force_assignment(cost.T)
    return sorted((j, i) for i, j in pairs), total


def assignment_total(cost, pairs) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(sum(cost[i, j] for i, j in pairs))


def build_intra_matches(
    set_a: SampledSet,
    set_b: SampledSet,
    t: SimilarityTransform,
    algorithm: str = "hungarian",
    cap: int = 4096,
) -> MatchSet:
    """Match downsampled points across the two views of one cloud.

    The cost of pairing a-point i with b-point j is the Euclidean distance
    between the transformed a-location and the b-location. Over the cap, the
    cheapest pairs win.
    """
    if set_a.m == 0 or set_b.m == 0:
        raise ConfigError("cannot match empty sampled sets")
    moved = t.apply_points(set_a.locations)
    diff = moved[:, None, :] - set_b.locations[None, :, :]
    cost = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if algorithm == "hungarian":
        pairs = hungarian(cost)
    elif algorithm == "greedy":
        pairs = greedy_assign(cost)
    else:
        raise ConfigError(f"unknown matching algorithm: {algorithm!r}")
    costs = np.array([cost[i, j] for i, j in pairs])
    if len(pairs) > cap:
        order = sorted(range(len(pairs)), key=lambda p: (costs[p], pairs[p]))[:cap]
        order.sort()
        pairs = [pairs[p] for p in order]
        costs = costs[order]
    return MatchSet(pairs=pairs, costs=costs, kind="intra")


def build_inter_matches(
    points: SampledSet,
    camera: CameraModel,
    feature_map,
    cap: int = 4096,
    rng: Optional[np.random.Generator] = None,
):
    """Pair each in-view downsampled point with the image feature sampled at
    its projected pixel.

    Returns the match set plus the sampled (m, d) feature rows. Over the cap,
    a seeded random subset is kept (there is no cost ordering to prefer).
    Raises EmptyMatchError when no point projects into the image.
    """
    uv, _, valid = project(points.locations, camera)
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        raise EmptyMatchError("no sampled point projects into the image")
    if idx.size > cap:
        if rng is None:
            raise ConfigError(f"{idx.size} matches exceed cap {cap}; an rng is required to subsample")
        idx = np.sort(rng.choice(idx, size=cap, replace=False))
    coords = uv[idx] / float(feature_map.stride)
    sampled = bilinear_sample(feature_map.features, coords)
    pairs = [(int(q), row) for row, q in enumerate(idx)]
    return MatchSet(pairs=pairs, costs=None, kind="inter"), sampled
