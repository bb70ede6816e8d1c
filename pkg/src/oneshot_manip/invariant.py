"""Ground-truth invariant regions and point correspondences.

A region is the instance segment whose points move least when expressed in
the frame of the action pose, averaged over action-equivalent state pairs.
All costs are brute-force nearest-neighbor distances in that action frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .se3 import Pose
from .segmenter import PhaseKind
from .state import TrajectoryState

DEFAULT_EPSILON = 0.01


class NoFeasibleSegment(ValueError):
    """Every candidate segment was excluded (missing class or grasped)."""


@dataclass(frozen=True)
class InvariantRegion:
    """Point indices of one instance segment within a source state's cloud."""

    source_state: TrajectoryState
    point_indices: NDArray[np.int64]
    segment_instance_id: int

    def __post_init__(self) -> None:
        idx = np.unique(np.asarray(self.point_indices, dtype=np.int64))
        n = len(self.source_state.cloud)
        if idx.size == 0:
            raise ValueError("region must contain at least one point")
        if idx[0] < 0 or idx[-1] >= n:
            raise ValueError("region indices out of bounds")
        inst = self.source_state.cloud.instance_id[idx]
        if not np.all(inst == self.segment_instance_id):
            raise ValueError("region indices must all belong to the segment instance")
        idx.flags.writeable = False
        object.__setattr__(self, "point_indices", idx)

    def __len__(self) -> int:
        return int(self.point_indices.size)

    @property
    def points(self) -> NDArray[np.float64]:
        return self.source_state.cloud.points[self.point_indices]

    def to_dict(self) -> dict:
        """Annotation-file form: the state is referenced by its timestep."""
        return {
            "state_ref": int(self.source_state.proprio.timestep),
            "instance_id": int(self.segment_instance_id),
            "indices": self.point_indices.tolist(),
        }


@dataclass(frozen=True)
class StatePair:
    """Two action-equivalent states with their action poses."""

    state_a: TrajectoryState
    state_b: TrajectoryState
    pose_a: Pose
    pose_b: Pose


def _min_dists_in_action_frame(points_a: NDArray, pose_a: Pose,
                               points_b: NDArray, pose_b: Pose) -> NDArray:
    """For each point of a: distance to nearest point of b, both in action frames."""
    pa = pose_a.inverse().apply(points_a)
    qb = pose_b.inverse().apply(points_b)
    d2 = np.square(pa[:, None, :] - qb[None, :, :]).sum(axis=2)
    return np.sqrt(d2.min(axis=1))


def check_invariant_point(point, pairs: Sequence[StatePair], epsilon: float = DEFAULT_EPSILON) -> bool:
    """True iff every paired state has a counterpart within epsilon in the action frame."""
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    point = np.asarray(point, dtype=np.float64).reshape(1, 3)
    for pair in pairs:
        dist = _min_dists_in_action_frame(point, pair.pose_a,
                                          pair.state_b.cloud.points, pair.pose_b)[0]
        if not dist < epsilon:
            return False
    return True


def _same_state(a: TrajectoryState, b: TrajectoryState) -> bool:
    return a is b or (np.array_equal(a.cloud.points, b.cloud.points)
                      and np.array_equal(a.cloud.instance_id, b.cloud.instance_id))


def segment_displacement_cost(segment_points: NDArray, segment_class: int,
                              pairs: Sequence[StatePair]) -> float:
    """Mean action-frame distance of segment points to same-class points,
    averaged over pairs; infinite when some paired state lacks the class."""
    costs = []
    for pair in pairs:
        cloud_b = pair.state_b.cloud
        mask = cloud_b.class_id == segment_class
        if not mask.any():
            return float("inf")
        dists = _min_dists_in_action_frame(segment_points, pair.pose_a,
                                           cloud_b.points[mask], pair.pose_b)
        costs.append(dists.mean())
    return float(np.mean(costs))


def gt_invariant_region(pairs: Sequence[StatePair], phase_kind: PhaseKind) -> InvariantRegion:
    """Segment of the shared state_a with minimal action-frame displacement.

    During post-contact the segment attached to the gripper is excluded before
    the argmin, so the region names the placement target instead of the
    trivially co-moving grasped object. Cost ties break to the lowest
    instance id.
    """
    if not pairs:
        raise ValueError("need at least one state pair")
    state_a = pairs[0].state_a
    if not all(_same_state(p.state_a, state_a) for p in pairs[1:]):
        raise ValueError("all pairs must share the same state_a")

    cloud = state_a.cloud
    candidates = sorted(int(i) for i in np.unique(cloud.instance_id))
    if phase_kind is PhaseKind.POST_CONTACT and state_a.attached_instance is not None:
        candidates = [i for i in candidates if i != state_a.attached_instance]
    if not candidates:
        raise NoFeasibleSegment("no candidate segments after exclusion")

    best_id = None
    best_cost = float("inf")
    for instance in candidates:
        idx = cloud.instance_indices(instance)
        cost = segment_displacement_cost(cloud.points[idx],
                                         cloud.class_of_instance(instance), pairs)
        if cost < best_cost:
            best_cost = cost
            best_id = instance
    if best_id is None:
        raise NoFeasibleSegment("every candidate segment lacks a same-class "
                                "counterpart in some paired state")
    return InvariantRegion(state_a, cloud.instance_indices(best_id), best_id)


def gt_correspondences(region_a: InvariantRegion, region_b: InvariantRegion,
                       pose_a: Pose, pose_b: Pose) -> list[tuple[int, int]]:
    """Action-frame nearest-neighbor pairing from region_a into region_b.

    Returns (index into a's cloud, index into b's cloud) pairs, one per region_a
    point in ascending index order; argmin ties break to the lowest b index.
    """
    pa = pose_a.inverse().apply(region_a.points)
    qb = pose_b.inverse().apply(region_b.points)
    d2 = np.square(pa[:, None, :] - qb[None, :, :]).sum(axis=2)
    nearest = d2.argmin(axis=1)
    b_indices = region_b.point_indices
    return [(int(i), int(b_indices[j]))
            for i, j in zip(region_a.point_indices, nearest)]
