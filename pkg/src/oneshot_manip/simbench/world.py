"""Kinematic world state: object poses, attach/detach, cloud sampling,
collision world construction and the lift-transit-descend motion primitive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from ..cloud import LabeledCloud
from ..planner import Box, PlanConfig, WorldModel, plan_rrt_connect
from ..se3 import Pose, interpolate_pose, quat_from_rotation
from .tasks import (GRIPPER_HALFEXTENTS, TABLE_CLASS, TABLE_INSTANCE, TRANSIT_Z,
                    TaskSpec, WORKSPACE_MAX, WORKSPACE_MIN, object_base_points,
                    table_points)

Array = NDArray[np.float64]


class KinematicWorld:
    """Objects rigidly parented to the gripper while attached; no dynamics."""

    def __init__(self, task: TaskSpec, poses: Optional[dict[int, Pose]] = None):
        self.task = task
        self.poses: dict[int, Pose] = (
            dict(poses) if poses is not None
            else {o.instance_id: o.pose for o in task.objects})
        self.attached: Optional[int] = None
        self.attach_offset: Optional[Pose] = None
        self.version = 0  # bumps whenever any object pose changes
        self._base = {o.instance_id: object_base_points(task, o.instance_id)
                      for o in task.objects}
        self._table = table_points(task)
        self._classes = {o.instance_id: o.class_id for o in task.objects}

    def attach(self, instance: int, ee_pose: Pose) -> None:
        self.attached = instance
        self.attach_offset = ee_pose.inverse().compose(self.poses[instance])

    def detach(self) -> None:
        self.attached = None
        self.attach_offset = None

    def carry_to(self, ee_pose: Pose) -> None:
        if self.attached is not None:
            self.poses[self.attached] = ee_pose.compose(self.attach_offset)
            self.version += 1

    def sample_cloud(self, noise_sigma: float = 0.0, rng=None) -> LabeledCloud:
        """Scene cloud in fixed instance order: table first, then objects."""
        chunks = [self._table]
        inst = [np.full(len(self._table), TABLE_INSTANCE, dtype=np.int64)]
        cls = [np.full(len(self._table), TABLE_CLASS, dtype=np.int64)]
        for obj in self.task.objects:
            pts = self.poses[obj.instance_id].apply(self._base[obj.instance_id])
            chunks.append(pts)
            inst.append(np.full(len(pts), obj.instance_id, dtype=np.int64))
            cls.append(np.full(len(pts), obj.class_id, dtype=np.int64))
        points = np.vstack(chunks)
        if noise_sigma > 0.0 and rng is not None:
            points = points + rng.normal(0.0, noise_sigma, points.shape)
        return LabeledCloud(points, np.concatenate(inst), np.concatenate(cls))

    def object_aabb(self, instance: int) -> Box:
        obj = self.task.object(instance)
        pose = self.poses[instance]
        reach = np.abs(pose.rotation) @ obj.halfextents
        return Box(pose.translation - reach, pose.translation + reach)

    def collision_world(self, exclude: tuple[int, ...] = ()) -> WorldModel:
        skip = set(exclude)
        if self.attached is not None:
            skip.add(self.attached)
        workspace = Box(WORKSPACE_MIN, WORKSPACE_MAX)
        boxes = tuple(
            box for box in (self.object_aabb(o.instance_id)
                            for o in self.task.objects
                            if o.instance_id not in skip)
            # A box wholly outside the workspace cannot touch a gripper
            # constrained to stay inside it.
            if box.overlaps(workspace))
        return WorldModel(boxes, workspace, GRIPPER_HALFEXTENTS)


def hover_above(pose: Pose, z: float = TRANSIT_Z) -> Pose:
    t = pose.translation.copy()
    t[2] = z
    return Pose(pose.rotation, t)


@dataclass(frozen=True)
class MotionLeg:
    """One planned or straight segment plus whether checking was bypassed."""

    waypoints: tuple[Pose, ...]
    allow_collision: bool


def plan_phase_motion(world: KinematicWorld, ee: Pose, target: Pose,
                      cfg: PlanConfig, allow_collision: bool = True) -> list[MotionLeg]:
    """Lift to transit height, plan across, descend onto the target.

    The transit leg is always collision checked (attached object excluded from
    obstacles); the final descend and the initial retreat honor the action's
    collision flag since they intentionally close on geometry.
    """
    legs: list[MotionLeg] = []
    gap = float(np.linalg.norm(target.translation - ee.translation))
    rot_gap = 1.0 - abs(float(
        np.dot(quat_from_rotation(target.rotation), quat_from_rotation(ee.rotation))))
    if gap < 1e-9 and rot_gap < 1e-12:
        return legs

    up = hover_above(ee)
    over = hover_above(target)
    legs.append(MotionLeg((ee, up), allow_collision=True))
    transit = plan_rrt_connect(world.collision_world(), up, over, cfg,
                               allow_collision=False)
    legs.append(MotionLeg(tuple(transit), allow_collision=False))
    legs.append(MotionLeg((over, target), allow_collision=allow_collision))
    return legs


def resample_legs(legs: list[MotionLeg], frames: int,
                  fallback: Optional[Pose] = None) -> list[Pose]:
    """Exactly `frames` poses along the concatenated legs, arc-length spaced,
    ending at the final pose (the starting pose is not repeated). Zero-length
    input holds at `fallback`."""
    waypoints: list[Pose] = []
    for leg in legs:
        for pose in leg.waypoints:
            if not waypoints or not pose.almost_equal(waypoints[-1], 1e-12):
                waypoints.append(pose)
    if len(waypoints) < 2:
        anchor = waypoints[0] if waypoints else (fallback or Pose.identity())
        return [anchor] * frames

    lengths = []
    for a, b in zip(waypoints, waypoints[1:]):
        trans = float(np.linalg.norm(b.translation - a.translation))
        qa, qb = quat_from_rotation(a.rotation), quat_from_rotation(b.rotation)
        angle = 2.0 * math.acos(min(1.0, abs(float(qa @ qb))))
        lengths.append(trans + 0.1 * angle)
    total = sum(lengths)
    if total <= 0.0:
        return [waypoints[-1]] * frames

    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    out = []
    for i in range(1, frames + 1):
        s = total * i / frames
        seg = min(int(np.searchsorted(cumulative, s, side="right")) - 1,
                  len(lengths) - 1)
        seg_len = lengths[seg]
        t = 1.0 if seg_len <= 0.0 else (s - cumulative[seg]) / seg_len
        out.append(interpolate_pose(waypoints[seg], waypoints[seg + 1], min(1.0, t)))
    out[-1] = waypoints[-1]
    return out
