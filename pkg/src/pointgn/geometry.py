"""Point-cloud container and the deterministic spatial primitives.

Everything here is a pure function of its inputs.  Wherever a choice between
equal candidates has to be made (FPS seed, FPS ties, k-NN ties) the winner is
the point with the lexicographically smallest ``(x, y, z)``, then the lowest
index.  All searches run on the lexicographically sorted copy of the cloud,
so reordering the input rows never changes which *points* are chosen.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import InvalidArgumentError, InvalidInputError

GROUP_EPS = 1e-5


def _as_xyz(points: ArrayLike, name: str = "points") -> NDArray[np.float64]:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInputError(f"{name} must have shape (N, 3); got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError(f"{name} contains non-finite coordinates")
    return pts


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """N unordered 3D points with an optional class index."""

    points: NDArray[np.float64]
    label: Optional[int] = None

    def __post_init__(self) -> None:
        pts = _as_xyz(self.points)
        if pts.shape[0] < 1:
            raise InvalidInputError("a point cloud needs at least one point")
        object.__setattr__(self, "points", _readonly(pts))
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class GroupedNeighborhood:
    """K neighbors of one downsampled center, with their coordinates and features."""

    center_index: int
    neighbor_indices: NDArray[np.intp]
    coords: NDArray[np.float64]
    feats: NDArray[np.float64]

    @property
    def k(self) -> int:
        return len(self.neighbor_indices)


def lex_order(points: NDArray[np.float64]) -> NDArray[np.intp]:
    """Indices sorting rows by (x, y, z), equal rows kept in index order."""
    return np.lexsort((points[:, 2], points[:, 1], points[:, 0]))


def squared_distances(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    """Broadcasted squared Euclidean distance over the last axis (length 3).

    Written out per axis so the rounding is identical to a scalar loop.
    """
    d = a - b
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def normalize_unit_sphere(cloud: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the farthest point has norm 1."""
    pts = cloud.points
    # centroid summed in lexicographic order so it does not depend on row order
    centroid = pts[lex_order(pts)].mean(axis=0)
    centered = pts - centroid
    scale = np.sqrt(squared_distances(centered, np.zeros(3)).max())
    if scale > 0:
        centered = centered / scale
    else:
        centered = np.zeros_like(centered)
    return PointCloud(centered, cloud.label)


def fps(points: ArrayLike, m: int) -> NDArray[np.intp]:
    """Greedy farthest point sampling.

    The seed is the point farthest from the centroid.  Each following pick
    maximizes the minimum distance to everything picked so far.
    """
    pts = _as_xyz(points)
    n = pts.shape[0]
    m = int(m)
    if not 1 <= m <= n:
        raise InvalidArgumentError(f"fps needs 1 <= m <= N; got m={m}, N={n}")

    order = lex_order(pts)
    p = pts[order]
    centroid = p.mean(axis=0)
    chosen = np.empty(m, dtype=np.intp)
    # np.argmax returns the first maximum, i.e. the lexicographically smallest point
    cur = int(np.argmax(squared_distances(p, centroid)))
    chosen[0] = cur
    taken = np.zeros(n, dtype=bool)
    taken[cur] = True
    min_d = squared_distances(p, p[cur])
    for i in range(1, m):
        cand = np.where(taken, -1.0, min_d)
        cur = int(np.argmax(cand))
        chosen[i] = cur
        taken[cur] = True
        np.minimum(min_d, squared_distances(p, p[cur]), out=min_d)
    return order[chosen]


def knn(
    queries: ArrayLike,
    points: ArrayLike,
    k: int,
    clamp_k: bool = False,
) -> NDArray[np.intp]:
    """Exact k nearest neighbors of every query row, nearest first.

    Returns an ``(M, k)`` index matrix into ``points``.  If ``k`` exceeds the
    number of points this raises, unless ``clamp_k`` is set, in which case
    ``k`` is reduced to ``N``.
    """
    q = _as_xyz(queries, "queries")
    pts = _as_xyz(points)
    n = pts.shape[0]
    k = int(k)
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1; got {k}")
    if k > n:
        if not clamp_k:
            raise InvalidArgumentError(f"k={k} exceeds the {n} available points")
        k = n

    order = lex_order(pts)
    d = squared_distances(q[:, None, :], pts[order][None, :, :])
    # columns are lex-ordered, so ordering by (distance, column) applies the tie rule
    if k == n:
        return order[np.argsort(d, axis=1, kind="stable")]
    part = np.argpartition(d, k - 1, axis=1)[:, :k]
    part_d = np.take_along_axis(d, part, axis=1)
    idx = np.take_along_axis(part, np.lexsort((part, part_d), axis=-1), axis=1)
    # rows where the k-th distance is shared by points left outside the partition
    spill = np.count_nonzero(d <= part_d.max(axis=1, keepdims=True), axis=1) > k
    if spill.any():
        idx[spill] = np.argsort(d[spill], axis=1, kind="stable")[:, :k]
    return order[idx]


def gather_group(
    center_idx: int,
    neighbor_idx: ArrayLike,
    coords: ArrayLike,
    feats: ArrayLike,
) -> GroupedNeighborhood:
    """Copy the neighbor rows of ``coords`` and ``feats`` in neighbor order."""
    coords = np.asarray(coords, dtype=np.float64)
    feats = np.asarray(feats, dtype=np.float64)
    nb = np.asarray(neighbor_idx, dtype=np.intp).reshape(-1)
    n = coords.shape[0]
    if feats.shape[0] != n:
        raise InvalidArgumentError(f"coords has {n} rows but feats has {feats.shape[0]}")
    if nb.size == 0:
        raise InvalidArgumentError("a group needs at least one neighbor")
    if not 0 <= int(center_idx) < n or nb.min() < 0 or nb.max() >= n:
        raise InvalidArgumentError(f"group index out of range for a set of {n} points")
    return GroupedNeighborhood(int(center_idx), nb.copy(), coords[nb].copy(), feats[nb].copy())


def normalize_groups(
    values: NDArray[np.float64],
    std_mode: str = "pooled",
    eps: float = GROUP_EPS,
) -> NDArray[np.float64]:
    """Batched group normalization over the neighbor axis of a ``(G, K, D)`` array.

    ``pooled`` divides by one standard deviation over all K*D entries of a
    group; ``per-dimension`` uses one per column.
    """
    centered = values - values.mean(axis=-2, keepdims=True)
    if std_mode == "pooled":
        std = centered.std(axis=(-2, -1), keepdims=True)
    elif std_mode == "per-dimension":
        std = centered.std(axis=-2, keepdims=True)
    else:
        raise InvalidArgumentError(f"unknown group std mode {std_mode!r}")
    return centered / (std + eps)


def group_normalize(
    group: GroupedNeighborhood,
    std_mode: str = "pooled",
    eps: float = GROUP_EPS,
) -> GroupedNeighborhood:
    return GroupedNeighborhood(
        group.center_index,
        group.neighbor_indices.copy(),
        normalize_groups(group.coords, std_mode, eps),
        normalize_groups(group.feats, std_mode, eps),
    )
