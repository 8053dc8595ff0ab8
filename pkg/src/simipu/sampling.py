"""Farthest-point sampling, ball grouping, and the set-abstraction block.

The point encoder downsamples a cloud in stages: pick centers (greedy
farthest-first, in Euclidean or feature space), gather each center's ball
neighborhood, run a shared MLP over [relative offset, member feature] rows,
and max-pool per group. FPS is inherently sequential; everything around it
is vectorized.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import DiffArray
from .errors import ConfigError


@dataclass(frozen=True)
class NeighborGroup:
    center_index: int
    member_indices: np.ndarray          # (m,) ints, center always included
    relative_offsets: np.ndarray        # (m, 3) member minus center, meters


@dataclass
class SampledSet:
    """Downsampled point locations plus their features.

    Locations are plain data (positions carry no gradient); features live in
    the autodiff graph.
    """

    locations: np.ndarray
    features: DiffArray

    def __post_init__(self):
        if self.locations.shape[0] == 0:
            raise ConfigError("SampledSet must be non-empty")
        if self.locations.shape[0] != self.features.value.shape[0]:
            raise ConfigError(
                f"locations/features row mismatch: {self.locations.shape[0]} vs {self.features.value.shape[0]}"
            )

    @property
    def m(self) -> int:
        return self.locations.shape[0]


def _sq_dists_to(points: np.ndarray, sq_norms: np.ndarray, index: int) -> np.ndarray:
    """Squared distances from every row to row ``index`` (one BLAS matvec)."""
    return sq_norms + sq_norms[index] - 2.0 * (points @ points[index])


def _farthest_first(points: np.ndarray, k: int, start_index: int) -> np.ndarray:
    """Greedy farthest-first ordering in the metric of ``points`` rows.

    Ties break toward the lowest index; already-picked points are excluded
    explicitly so fully degenerate inputs (all rows equal) cannot repick.
    """
    points = np.ascontiguousarray(points)
    sq_norms = np.einsum("ij,ij->i", points, points)
    k_total = k
    picked = np.empty(k_total, dtype=np.intp)
    picked[0] = start_index
    min_d2 = _sq_dists_to(points, sq_norms, start_index)
    min_d2[start_index] = -np.inf
    for i in range(1, k_total):
        nxt = int(np.argmax(min_d2))  # argmax returns the first (lowest-index) maximum
        picked[i] = nxt
        np.minimum(min_d2, _sq_dists_to(points, sq_norms, nxt), out=min_d2)
        min_d2[nxt] = -np.inf
    return picked


def _check_fps_args(n: int, k: int, start_index: int) -> None:
    if not 1 <= k <= n:
        raise ConfigError(f"cannot sample k={k} points from n={n}")
    if not 0 <= start_index < n:
        raise ConfigError(f"start index {start_index} out of range for n={n}")


def d_fps(locations: np.ndarray, k: int, start_index: int = 0) -> np.ndarray:
    """Farthest-point sampling in 3-D Euclidean distance."""
    locations = np.asarray(locations, dtype=np.float64)
    _check_fps_args(locations.shape[0], k, start_index)
    return _farthest_first(locations, k, start_index)


def f_fps(locations: np.ndarray, features: np.ndarray, k: int, start_index: int = 0) -> np.ndarray:
    """Farthest-point sampling in feature-space Euclidean distance."""
    locations = np.asarray(locations)
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != locations.shape[0]:
        raise ConfigError(f"features rows {features.shape[0]} != locations rows {locations.shape[0]}")
    if not np.isfinite(features).all():
        raise ConfigError("f_fps features must be finite")
    _check_fps_args(locations.shape[0], k, start_index)
    return _farthest_first(features, k, start_index)


def fused_sample(locations: np.ndarray, features: np.ndarray, k: int, start_index: int = 0) -> np.ndarray:
    """Half the picks by Euclidean FPS, half by feature-space FPS on the rest.

    The feature half continues the same greedy recurrence seeded with the
    Euclidean picks, so duplicates are impossible by construction.
    """
    if k % 2:
        raise ConfigError(f"fused_sample needs an even k, got {k}")
    locations = np.asarray(locations, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    _check_fps_args(locations.shape[0], k, start_index)
    half = k // 2
    euclid = _farthest_first(locations, half, start_index)

    features = np.ascontiguousarray(features)
    sq_norms = np.einsum("ij,ij->i", features, features)
    min_d2 = np.full(locations.shape[0], np.inf)
    for idx in euclid:
        np.minimum(min_d2, _sq_dists_to(features, sq_norms, idx), out=min_d2)
    min_d2[euclid] = -np.inf
    feat = np.empty(half, dtype=np.intp)
    for i in range(half):
        nxt = int(np.argmax(min_d2))
        feat[i] = nxt
        np.minimum(min_d2, _sq_dists_to(features, sq_norms, nxt), out=min_d2)
        min_d2[nxt] = -np.inf
    return np.concatenate([euclid, feat])


def ball_group(
    locations: np.ndarray,
    centers: Sequence[int],
    radius: float,
    max_neighbors: int,
    rng: Optional[np.random.Generator] = None,
) -> list[NeighborGroup]:
    """Collect up to ``max_neighbors`` points within ``radius`` of each center.

    The center always belongs to its own group; oversubscribed balls keep the
    center and a seeded random subset of the rest. An empty ball degrades to
    the center alone, which keeps pooling well-defined.
    """
    if radius <= 0:
        raise ConfigError(f"ball radius must be positive, got {radius}")
    if max_neighbors < 1:
        raise ConfigError(f"max_neighbors must be >= 1, got {max_neighbors}")
    locations = np.ascontiguousarray(locations, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.intp)
    k, n = centers.size, locations.shape[0]
    sq = np.einsum("ij,ij->i", locations, locations)
    d2 = sq[centers, None] + sq[None, :] - 2.0 * (locations[centers] @ locations.T)
    within = d2 <= float(radius) ** 2
    rows = np.arange(k)
    within[rows, centers] = True  # numeric safety: a center is always inside its own ball

    # rank candidates: the center first (-1), then either index order (no rng)
    # or seeded random keys; everything outside the ball sorts to +inf
    if rng is None:
        keys = np.broadcast_to(np.arange(n, dtype=np.float32), (k, n))
    else:
        keys = rng.random((k, n), dtype=np.float32)
    priority = np.where(within, keys, np.float32(np.inf))
    priority[rows, centers] = -1.0
    m = min(max_neighbors, n)
    if m < n:
        picks = np.argpartition(priority, m - 1, axis=1)[:, :m]
    else:
        picks = np.argsort(priority, axis=1, kind="stable")[:, :m]
    pick_ok = np.isfinite(priority[rows[:, None], picks])

    groups = []
    for row, center in enumerate(centers):
        members = picks[row][pick_ok[row]]
        members = np.concatenate([[center], members[members != center]])
        groups.append(
            NeighborGroup(
                center_index=int(center),
                member_indices=members,
                relative_offsets=locations[members] - locations[center],
            )
        )
    return groups


@dataclass
class StageParams:
    """Shared two-layer MLP weights for one set-abstraction stage."""

    w0: DiffArray
    b0: DiffArray
    w1: DiffArray
    b1: DiffArray

    @property
    def in_width(self) -> int:
        return self.w0.value.shape[0]

    @property
    def out_width(self) -> int:
        return self.w1.value.shape[1]


def set_abstraction(
    locations: np.ndarray,
    features: DiffArray,
    params: StageParams,
    k: int,
    radius: float,
    max_neighbors: int,
    rng: Optional[np.random.Generator] = None,
    start_index: int = 0,
    use_feature_fps: bool = True,
) -> SampledSet:
    """One downsampling stage: sample centers, group, encode, max-pool.

    Member lists are padded to ``max_neighbors`` by repeating the center, a
    no-op under max pooling, so the whole stage runs as one matrix product.
    """
    locations = np.asarray(locations, dtype=np.float64)
    n, d_in = features.value.shape
    if locations.shape[0] != n:
        raise ConfigError(f"locations rows {locations.shape[0]} != feature rows {n}")
    if params.in_width != 3 + d_in:
        raise ConfigError(
            f"stage MLP expects input width {params.in_width}, got 3+{d_in}"
        )
    if use_feature_fps:
        centers = fused_sample(locations, features.value, k, start_index=start_index)
    else:
        centers = d_fps(locations, k, start_index=start_index)
    groups = ball_group(locations, centers, radius, max_neighbors, rng=rng)

    member_idx = np.empty((k, max_neighbors), dtype=np.intp)
    for row, group in enumerate(groups):
        m = group.member_indices.size
        member_idx[row, :m] = group.member_indices
        member_idx[row, m:] = group.center_index

    flat_idx = member_idx.reshape(-1)
    center_locs = locations[centers]
    rel = (locations[flat_idx].reshape(k, max_neighbors, 3) - center_locs[:, None, :]).reshape(-1, 3)

    member_feats = dc.take_rows(features, flat_idx)
    x = dc.concat([dc.constant(rel.astype(features.value.dtype)), member_feats], axis=1)
    h = dc.relu(dc.add(dc.matmul(x, params.w0), params.b0))
    y = dc.relu(dc.add(dc.matmul(h, params.w1), params.b1))
    pooled = dc.reduce_max(dc.reshape(y, (k, max_neighbors, params.out_width)), axis=1)
    return SampledSet(locations=center_locs, features=pooled)
