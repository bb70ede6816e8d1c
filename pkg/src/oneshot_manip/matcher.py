"""Execution-time matching: state routing, dual-softmax correspondence,
binarization and correspondence-based pose regression.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .cloud import DescriptorSet
from .se3 import Pose, WeightedPointSet, alignment_residual, solve_weighted_procrustes

Array = NDArray[np.float64]

DEFAULT_TEMPERATURE = 1.0
DEFAULT_MATCH_THRESHOLD = 0.1


class DimensionMismatch(ValueError):
    pass


class InsufficientMatches(ValueError):
    pass


@dataclass(frozen=True)
class RoutingQuery:
    """Features of one state for routing: scene vector, gripper bit, progress."""

    scene_descriptor: Array
    gripper_open: bool
    time_fraction: float


@dataclass(frozen=True)
class RoutingResult:
    demo_index: int
    distance: float


def route_state(current: RoutingQuery, demo_macro_steps: Sequence[RoutingQuery],
                gripper_weight: float = 1.0) -> RoutingResult:
    """Macro-step with the nearest concatenated feature vector; ties to lowest index."""
    if not demo_macro_steps:
        raise ValueError("need at least one macro step")

    def features(q: RoutingQuery) -> Array:
        return np.concatenate([
            np.asarray(q.scene_descriptor, dtype=np.float64),
            [gripper_weight * (1.0 if q.gripper_open else 0.0), q.time_fraction],
        ])

    target = features(current)
    dists = []
    for step in demo_macro_steps:
        vec = features(step)
        if vec.shape != target.shape:
            raise DimensionMismatch(
                f"scene descriptor length {vec.shape[0] - 2} differs from "
                f"query length {target.shape[0] - 2}")
        dists.append(float(np.linalg.norm(vec - target)))
    best = int(np.argmin(dists))
    return RoutingResult(best, dists[best])


def dual_softmax(h_region: DescriptorSet, h_scene: DescriptorSet,
                 temperature: float = DEFAULT_TEMPERATURE) -> Array:
    """Elementwise product of row- and column-softmaxed similarity logits.

    Logits are scaled dot products (h_region @ h_scene.T) / temperature; the
    row softmax normalizes over scene points for each region point and the
    column softmax the other way around.
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    if h_region.dim != h_scene.dim:
        raise DimensionMismatch(
            f"descriptor dims differ: {h_region.dim} vs {h_scene.dim}")
    logits = (h_region.vectors @ h_scene.vectors.T) / temperature
    row = _softmax(logits, axis=1)
    col = _softmax(logits, axis=0)
    return row * col


def _softmax(logits: Array, axis: int) -> Array:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def binarize(soft: Array, match_threshold: float = DEFAULT_MATCH_THRESHOLD) -> list[tuple[int, int]]:
    """Mutual-nearest pairs at or above the threshold, ties to lowest index."""
    if not 0.0 < match_threshold < 1.0:
        raise ValueError("match_threshold must lie in (0, 1)")
    soft = np.asarray(soft, dtype=np.float64)
    row_best = soft.argmax(axis=1)
    col_best = soft.argmax(axis=0)
    pairs = []
    for i, j in enumerate(row_best):
        if col_best[j] == i and soft[i, j] >= match_threshold:
            pairs.append((int(i), int(j)))
    return pairs


@dataclass(frozen=True)
class CorrespondenceMatrix:
    """Soft region-to-scene affinities plus their binarized mutual matches."""

    soft: Array
    binary: tuple[tuple[int, int], ...]
    n_region: int
    m_scene: int

    def __post_init__(self) -> None:
        soft = np.asarray(self.soft, dtype=np.float64)
        if soft.shape != (self.n_region, self.m_scene):
            raise ValueError(f"soft matrix shape {soft.shape} does not match "
                             f"({self.n_region}, {self.m_scene})")
        if soft.size and (soft.min() < 0.0 or soft.max() > 1.0):
            raise ValueError("soft entries must lie in [0, 1]")
        seen_rows = set()
        for i, j in self.binary:
            if not (0 <= i < self.n_region and 0 <= j < self.m_scene):
                raise ValueError(f"binary pair ({i}, {j}) out of range")
            if i in seen_rows:
                raise ValueError(f"region point {i} matched more than once")
            seen_rows.add(i)
        soft.flags.writeable = False
        object.__setattr__(self, "soft", soft)
        object.__setattr__(self, "binary", tuple(self.binary))

    @classmethod
    def from_soft(cls, soft: Array,
                  match_threshold: float = DEFAULT_MATCH_THRESHOLD) -> "CorrespondenceMatrix":
        soft = np.asarray(soft, dtype=np.float64)
        return cls(soft, tuple(binarize(soft, match_threshold)),
                   soft.shape[0], soft.shape[1])


def regress_pose(corr: CorrespondenceMatrix, region_points: Array,
                 scene_points: Array, demo_pose: Pose,
                 mode: str = "binary") -> Pose:
    """Rigid transform mapping demo-action-frame region points onto the scene.

    Region points are taken into the demonstration action frame through
    demo_pose^-1 and aligned against their matched scene points with the
    soft values as weights, so the result T satisfies
    T * demo_pose^-1 * region ~= scene.

    mode="soft" skips binarization: each scene point with enough soft column
    mass is paired with the soft-weighted barycentre of the region points.
    """
    region_points = np.asarray(region_points, dtype=np.float64)
    scene_points = np.asarray(scene_points, dtype=np.float64)
    inv_demo = demo_pose.inverse()

    if mode == "binary":
        if len(corr.binary) < 3:
            raise InsufficientMatches(
                f"need at least 3 binary matches, got {len(corr.binary)}")
        rows = [i for i, _ in corr.binary]
        cols = [j for _, j in corr.binary]
        src = inv_demo.apply(region_points[rows])
        dst = scene_points[cols]
        weights = corr.soft[rows, cols]
    elif mode == "soft":
        mass = corr.soft.sum(axis=0)
        keep = mass > 1e-6
        if int(keep.sum()) < 3:
            raise InsufficientMatches("not enough scene points with soft mass")
        bary = (corr.soft[:, keep].T @ region_points) / mass[keep, None]
        src = inv_demo.apply(bary)
        dst = scene_points[keep]
        weights = mass[keep]
    else:
        raise ValueError(f"unknown mode {mode!r}")

    return solve_weighted_procrustes(
        WeightedPointSet(src, weights), WeightedPointSet.uniform(dst))


def regression_residual(pose: Pose, corr: CorrespondenceMatrix,
                        region_points: Array, scene_points: Array,
                        demo_pose: Pose) -> float:
    """Weighted squared residual of the binary matches under a candidate pose."""
    rows = [i for i, _ in corr.binary]
    cols = [j for _, j in corr.binary]
    src = demo_pose.inverse().apply(np.asarray(region_points)[rows])
    dst = np.asarray(scene_points)[cols]
    weights = corr.soft[rows, cols]
    return alignment_residual(pose, WeightedPointSet(src, weights),
                              WeightedPointSet.uniform(dst))


def correspondence_debug_json(corr: CorrespondenceMatrix,
                              residual: Optional[float] = None) -> str:
    """Debug dump: {"pairs": [[i, j, w], ...], "residual": r}."""
    pairs = [[int(i), int(j), float(corr.soft[i, j])] for i, j in corr.binary]
    return json.dumps({"pairs": pairs, "residual": residual})
