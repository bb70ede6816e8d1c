"""Labeled point clouds: nearest neighbors, voxel downsampling, descriptors.

Clouds are immutable values. The per-point descriptors are handcrafted
geometric features (eigenvalue ratios, heights, centroid offsets, density,
class); consumers treat the descriptor width as opaque.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]

DESCRIPTOR_DIM = 10
BRUTE_FORCE_LIMIT = 2048
DENSITY_CLAMP = 1e9


class KTooLarge(ValueError):
    """Requested more neighbors than the cloud has points."""


class UnknownClass(ValueError):
    """A class_id falls outside the configured class vocabulary."""


@dataclass(frozen=True)
class LabeledCloud:
    """Points with per-point instance and class labels.

    Invariant: within one cloud, every instance_id carries a single class_id.
    """

    points: Array
    instance_id: NDArray[np.int64]
    class_id: NDArray[np.int64]

    def __post_init__(self) -> None:
        points = np.ascontiguousarray(self.points, dtype=np.float64)
        inst = np.ascontiguousarray(self.instance_id, dtype=np.int64)
        cls = np.ascontiguousarray(self.class_id, dtype=np.int64)
        if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 1:
            raise ValueError(f"points must be (N >= 1, 3), got {points.shape}")
        n = points.shape[0]
        if inst.shape != (n,) or cls.shape != (n,):
            raise ValueError("instance_id and class_id must have one entry per point")
        pairs = {}
        for i, c in zip(inst.tolist(), cls.tolist()):
            if pairs.setdefault(i, c) != c:
                raise ValueError(f"instance {i} maps to multiple class ids")
        for arr in (points, inst, cls):
            arr.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "instance_id", inst)
        object.__setattr__(self, "class_id", cls)

    def __len__(self) -> int:
        return self.points.shape[0]

    def instance_indices(self, instance: int) -> NDArray[np.int64]:
        return np.nonzero(self.instance_id == instance)[0]

    def class_of_instance(self, instance: int) -> int:
        idx = self.instance_indices(instance)
        if idx.size == 0:
            raise KeyError(f"no points with instance_id {instance}")
        return int(self.class_id[idx[0]])


@dataclass(frozen=True)
class DescriptorSet:
    """One feature vector per cloud point."""

    vectors: Array

    def __post_init__(self) -> None:
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError("vectors must be (N, D)")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("descriptor entries must be finite")
        vectors.flags.writeable = False
        object.__setattr__(self, "vectors", vectors)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _knn_order(d2: Array, k: int) -> NDArray[np.int64]:
    idx = np.arange(d2.shape[0])
    order = np.lexsort((idx, d2))
    return order[:k]


def knn(cloud: LabeledCloud, query, k: int) -> list[int]:
    """Indices of the k nearest points, ascending distance, ties to lower index."""
    n = len(cloud)
    if k < 1:
        raise ValueError("k must be positive")
    if k > n:
        raise KTooLarge(f"k = {k} exceeds cloud size {n}")
    query = np.asarray(query, dtype=np.float64)
    if n <= BRUTE_FORCE_LIMIT:
        d2 = np.square(cloud.points - query).sum(axis=1)
        return _knn_order(d2, k).tolist()
    return _knn_grid(cloud.points, query, k)


def _knn_grid(points: Array, query: Array, k: int) -> list[int]:
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = float(max((hi - lo).max(), 1e-9))
    # Aim for a handful of points per cell.
    cells_per_axis = max(1, int(np.cbrt(points.shape[0] / 4.0)))
    cell = span / cells_per_axis
    keys = np.floor((points - lo) / cell).astype(np.int64)
    buckets: dict[tuple[int, int, int], list[int]] = {}
    for i, key in enumerate(map(tuple, keys.tolist())):
        buckets.setdefault(key, []).append(i)

    qkey = np.floor((query - lo) / cell).astype(np.int64)
    gathered: list[int] = []
    ring = 0
    max_ring = cells_per_axis + 2
    confirmed_d = -1.0
    while ring <= max_ring:
        for key in _ring_keys(qkey, ring):
            bucket = buckets.get(key)
            if bucket:
                gathered.extend(bucket)
        if len(gathered) >= k:
            cand = np.asarray(gathered)
            d2 = np.square(points[cand] - query).sum(axis=1)
            kth = np.sort(d2)[k - 1]
            confirmed_d = ring * cell
            if kth <= confirmed_d * confirmed_d or ring >= max_ring:
                # One extra ring guards against boundary ties.
                for key in _ring_keys(qkey, ring + 1):
                    bucket = buckets.get(key)
                    if bucket:
                        gathered.extend(bucket)
                cand = np.asarray(gathered)
                d2 = np.square(points[cand] - query).sum(axis=1)
                order = np.lexsort((cand, d2))
                return cand[order[:k]].tolist()
        ring += 1
    cand = np.asarray(gathered if gathered else np.arange(points.shape[0]))
    d2 = np.square(points[cand] - query).sum(axis=1)
    order = np.lexsort((cand, d2))
    return cand[order[:k]].tolist()


def _ring_keys(center: NDArray[np.int64], ring: int):
    cx, cy, cz = (int(v) for v in center)
    if ring == 0:
        yield (cx, cy, cz)
        return
    for dx in range(-ring, ring + 1):
        for dy in range(-ring, ring + 1):
            for dz in range(-ring, ring + 1):
                if max(abs(dx), abs(dy), abs(dz)) == ring:
                    yield (cx + dx, cy + dy, cz + dz)


def voxel_downsample(cloud: LabeledCloud, voxel: float) -> LabeledCloud:
    """One centroid point per occupied voxel, ordered by voxel key.

    Labels follow the majority instance in the voxel (ties to the lowest id);
    the class is the one bound to that instance so the cloud invariant holds.
    """
    if voxel <= 0.0:
        raise ValueError("voxel size must be positive")
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    instance_class = {int(i): int(c)
                      for i, c in zip(cloud.instance_id.tolist(), cloud.class_id.tolist())}

    n_out = uniq.shape[0]
    points = np.zeros((n_out, 3))
    inst = np.zeros(n_out, dtype=np.int64)
    cls = np.zeros(n_out, dtype=np.int64)
    for g in range(n_out):
        members = np.nonzero(inverse == g)[0]
        points[g] = cloud.points[members].mean(axis=0)
        ids, counts = np.unique(cloud.instance_id[members], return_counts=True)
        winner = int(ids[counts == counts.max()].min())
        inst[g] = winner
        cls[g] = instance_class[winner]
    return LabeledCloud(points, inst, cls)


def _batched_knn_distances(points: Array, k: int) -> tuple[Array, NDArray[np.int64]]:
    """For every point: distances and indices of its k nearest (self included)."""
    n = points.shape[0]
    dists = np.zeros((n, k))
    idx = np.zeros((n, k), dtype=np.int64)
    chunk = max(1, min(n, (1 << 20) // max(n, 1)))
    for start in range(0, n, chunk):
        block = points[start:start + chunk]
        d2 = np.square(block[:, None, :] - points[None, :, :]).sum(axis=2)
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        part_d = np.take_along_axis(d2, part, axis=1)
        order = np.argsort(part_d, axis=1, kind="stable")
        idx[start:start + chunk] = np.take_along_axis(part, order, axis=1)
        dists[start:start + chunk] = np.sqrt(np.take_along_axis(part_d, order, axis=1))
    return dists, idx


def _canonical_pca_axes(points: Array) -> Array:
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / points.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    axes = eigvecs[:, ::-1].copy()
    for j in range(3):
        lead = int(np.argmax(np.abs(axes[:, j])))
        if axes[lead, j] < 0.0:
            axes[:, j] = -axes[:, j]
    return axes


def point_descriptors(cloud: LabeledCloud, k: int = 8) -> DescriptorSet:
    """Per-point 10-dim geometric descriptors.

    Layout: 3 covariance eigenvalue ratios of the k-neighborhood, height above
    the cloud minimum, distance to the cloud centroid, centroid offset in the
    cloud's canonical PCA frame (3), local density 1/mean-kNN-distance
    (clamped), class id.
    """
    n = len(cloud)
    if k < 4:
        raise ValueError("k must be at least 4")
    if k > n:
        raise KTooLarge(f"k = {k} exceeds cloud size {n}")

    points = cloud.points
    dists, nbr = _batched_knn_distances(points, k)

    neighborhoods = points[nbr]
    centers = neighborhoods.mean(axis=1, keepdims=True)
    centered = neighborhoods - centers
    covs = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals = np.linalg.eigvalsh(covs)[:, ::-1]
    sums = eigvals.sum(axis=1)
    ratios = np.where(sums[:, None] > 1e-300, eigvals / np.maximum(sums[:, None], 1e-300), 0.0)

    centroid = points.mean(axis=0)
    height = points[:, 2] - points[:, 2].min()
    offsets = points - centroid
    centroid_dist = np.linalg.norm(offsets, axis=1)
    axes = _canonical_pca_axes(points)
    pca_offsets = offsets @ axes

    mean_dist = dists.sum(axis=1) / k
    density = np.minimum(1.0 / np.maximum(mean_dist, 1.0 / DENSITY_CLAMP), DENSITY_CLAMP)

    vectors = np.column_stack([
        ratios,
        height,
        centroid_dist,
        pca_offsets,
        density,
        cloud.class_id.astype(np.float64),
    ])
    return DescriptorSet(vectors)


def scene_descriptor(cloud: LabeledCloud, class_vocabulary: Sequence[int]) -> Array:
    """Scene-level vector: per-class point counts, centroid, axis extents."""
    vocab = list(class_vocabulary)
    positions = {c: i for i, c in enumerate(vocab)}
    counts = np.zeros(len(vocab))
    for c, n in zip(*np.unique(cloud.class_id, return_counts=True)):
        if int(c) not in positions:
            raise UnknownClass(f"class_id {int(c)} not in vocabulary {vocab}")
        counts[positions[int(c)]] = n
    centroid = cloud.points.mean(axis=0)
    extents = cloud.points.max(axis=0) - cloud.points.min(axis=0)
    return np.concatenate([counts, centroid, extents])


def write_cloud_text(cloud: LabeledCloud, path) -> None:
    """One point per line: x y z instance_id class_id."""
    with open(path, "w", encoding="utf-8") as fh:
        for p, i, c in zip(cloud.points.tolist(), cloud.instance_id, cloud.class_id):
            fh.write(f"{p[0]!r} {p[1]!r} {p[2]!r} {int(i)} {int(c)}\n")


def read_cloud_text(path) -> LabeledCloud:
    points, inst, cls = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            x, y, z, i, c = line.split()
            points.append((float(x), float(y), float(z)))
            inst.append(int(i))
            cls.append(int(c))
    return LabeledCloud(np.asarray(points), np.asarray(inst), np.asarray(cls))
