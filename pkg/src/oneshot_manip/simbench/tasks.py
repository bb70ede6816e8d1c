"""Procedural desk-scale task generation at three difficulty levels.

Every task has a tray fixture plus manipulands spawned on the opposite side
of the table. Goals place each manipuland onto the tray (levels 1 and 2) or
into a stack rooted on the tray (level 3); goals are anchored to the tray so
success stays well-defined when spawn poses are perturbed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from ..se3 import Pose

Array = NDArray[np.float64]

TABLE_INSTANCE = 0
TABLE_CLASS = 0
TRAY_INSTANCE = 1
TRAY_CLASS = 1

WORKSPACE_MIN = np.array([-0.5, -0.5, 0.0])
WORKSPACE_MAX = np.array([0.5, 0.5, 0.8])
TABLE_HALF_XY = 0.45
TRANSIT_Z = 0.50
GRIPPER_HALFEXTENTS = np.array([0.04, 0.04, 0.06])
GRASP_RAISE = 0.04

_LEVEL_MANIPULANDS = {1: 2, 2: 3, 3: 4}


@dataclass(frozen=True)
class ObjectSpec:
    instance_id: int
    class_id: int
    extents: Array
    pose: Pose

    def __post_init__(self) -> None:
        extents = np.asarray(self.extents, dtype=np.float64)
        if extents.shape != (3,) or np.any(extents <= 0):
            raise ValueError("extents must be a positive 3-vector")
        object.__setattr__(self, "extents", extents)

    @property
    def halfextents(self) -> Array:
        return self.extents / 2.0

    def grasp_offset(self) -> Pose:
        """End-effector pose relative to the object for a top grasp."""
        return Pose.from_translation((0.0, 0.0, self.extents[2] / 2.0 + GRASP_RAISE))


@dataclass(frozen=True)
class GoalSpec:
    instance_id: int
    target_pose: Pose
    tolerance_pos: float
    tolerance_rot: float
    anchor_instance: Optional[int] = TRAY_INSTANCE


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    level: int
    n_interactions: int
    objects: tuple[ObjectSpec, ...]
    goals: tuple[GoalSpec, ...]
    rng_seed: int
    cloud_density: float = 500.0
    min_object_points: int = 40

    def __post_init__(self) -> None:
        if self.n_interactions != 3 * len(self.goals):
            raise ValueError("n_interactions must be 3 phases per goal")
        ids = {o.instance_id for o in self.objects}
        for goal in self.goals:
            if goal.instance_id not in ids:
                raise ValueError(f"goal references unknown instance {goal.instance_id}")
            if goal.anchor_instance is not None and goal.anchor_instance not in ids:
                raise ValueError(f"goal anchor {goal.anchor_instance} unknown")

    def object(self, instance_id: int) -> ObjectSpec:
        for obj in self.objects:
            if obj.instance_id == instance_id:
                return obj
        raise KeyError(f"no object with instance {instance_id}")

    @property
    def class_vocabulary(self) -> tuple[int, ...]:
        return tuple(sorted({TABLE_CLASS} | {o.class_id for o in self.objects}))


def _footprint_radius(extents: Array) -> float:
    return math.hypot(extents[0] / 2.0, extents[1] / 2.0)


def _spawn_clear(pos, extents, placed: list[tuple[Array, Array]], margin: float = 0.04) -> bool:
    radius = _footprint_radius(extents)
    for other_pos, other_ext in placed:
        if (math.hypot(pos[0] - other_pos[0], pos[1] - other_pos[1])
                < radius + _footprint_radius(other_ext) + margin):
            return False
    return True


def generate_task(level: int, seed: int, cloud_density: float = 500.0,
                  min_object_points: int = 40,
                  tolerance_pos: float = 0.02, tolerance_rot: float = 0.2) -> TaskSpec:
    """Deterministic task for (level, seed): objects, goals and labels."""
    if level not in _LEVEL_MANIPULANDS:
        raise ValueError(f"level must be 1, 2 or 3, got {level}")
    rng = np.random.default_rng([17, level, seed])
    n_manip = _LEVEL_MANIPULANDS[level]

    tray_extents = np.array([0.30, 0.22, 0.02])
    tray_xy = rng.uniform([0.14, -0.12], [0.24, 0.12])
    tray_yaw = rng.uniform(-0.25, 0.25)
    tray_pose = Pose.rot_z(tray_yaw, (tray_xy[0], tray_xy[1], tray_extents[2] / 2.0))
    objects = [ObjectSpec(TRAY_INSTANCE, TRAY_CLASS, tray_extents, tray_pose)]
    placed = [(tray_pose.translation, tray_extents)]

    def spawn(extents: Array) -> Pose:
        for _ in range(200):
            pos = rng.uniform([-0.40, -0.34], [-0.10, 0.34])
            if _spawn_clear(pos, extents, placed):
                yaw = rng.uniform(-math.pi, math.pi)
                placed.append((np.array([pos[0], pos[1]]), extents))
                return Pose.rot_z(yaw, (pos[0], pos[1], extents[2] / 2.0))
        raise RuntimeError("could not find a clear spawn position")

    manipulands = []
    for k in range(n_manip):
        ex = rng.uniform(0.035, 0.05)
        extents = np.array([ex, ex * rng.uniform(1.25, 1.6), rng.uniform(0.04, 0.06)])
        pose = spawn(extents)
        instance = TRAY_INSTANCE + 1 + k
        manipulands.append(ObjectSpec(instance, instance, extents, pose))
    objects.extend(manipulands)

    next_instance = TRAY_INSTANCE + 1 + n_manip
    if rng.random() < 0.5:
        ex = rng.uniform(0.035, 0.05)
        extents = np.array([ex, ex * rng.uniform(1.25, 1.6), rng.uniform(0.04, 0.06)])
        objects.append(ObjectSpec(next_instance, next_instance, extents, spawn(extents)))

    goals = []
    if level in (1, 2):
        offsets = np.linspace(-0.09, 0.09, n_manip)
        for k, obj in enumerate(manipulands):
            local = Pose.from_translation(
                (offsets[k], 0.0, tray_extents[2] / 2.0 + obj.extents[2] / 2.0))
            goals.append(GoalSpec(obj.instance_id, tray_pose.compose(local),
                                  tolerance_pos, tolerance_rot))
    else:
        height = tray_extents[2] / 2.0
        for obj in manipulands:
            height += obj.extents[2] / 2.0
            local = Pose.from_translation((0.0, 0.0, height))
            goals.append(GoalSpec(obj.instance_id, tray_pose.compose(local),
                                  tolerance_pos, tolerance_rot))
            height += obj.extents[2] / 2.0

    for goal in goals:
        spawn_pos = next(o.pose.translation for o in objects
                         if o.instance_id == goal.instance_id)
        gap = np.linalg.norm(goal.target_pose.translation[:2] - spawn_pos[:2])
        if gap < 2.0 * tolerance_pos:
            raise RuntimeError("generated goal too close to its spawn pose")

    return TaskSpec(
        task_id=f"L{level}-s{seed}",
        level=level,
        n_interactions=3 * n_manip,
        objects=tuple(objects),
        goals=tuple(goals),
        rng_seed=seed,
        cloud_density=cloud_density,
        min_object_points=min_object_points,
    )


def sample_box_surface(extents: Array, count: int, rng) -> Array:
    """Uniform points on a box surface (object frame, centered)."""
    half = np.asarray(extents, dtype=np.float64) / 2.0
    areas = np.array([
        extents[1] * extents[2], extents[1] * extents[2],
        extents[0] * extents[2], extents[0] * extents[2],
        extents[0] * extents[1], extents[0] * extents[1],
    ])
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, (count, 2))
    pts = np.zeros((count, 3))
    for f in range(6):
        mask = faces == f
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        other = [a for a in range(3) if a != axis]
        pts[mask, axis] = sign * half[axis]
        pts[mask, other[0]] = u[mask, 0] * half[other[0]]
        pts[mask, other[1]] = u[mask, 1] * half[other[1]]
    return pts


def object_point_count(obj: ObjectSpec, density: float, min_points: int) -> int:
    e = obj.extents
    area = 2.0 * (e[0] * e[1] + e[1] * e[2] + e[0] * e[2])
    return max(min_points, int(round(density * area)))


def object_base_points(task: TaskSpec, instance_id: int) -> Array:
    """Deterministic object-frame surface samples, fixed order per instance."""
    obj = task.object(instance_id)
    rng = np.random.default_rng([29, task.level, task.rng_seed, instance_id])
    count = object_point_count(obj, task.cloud_density, task.min_object_points)
    return sample_box_surface(obj.extents, count, rng)


def table_points(task: TaskSpec) -> Array:
    rng = np.random.default_rng([29, task.level, task.rng_seed, TABLE_INSTANCE])
    area = (2.0 * TABLE_HALF_XY) ** 2
    count = max(100, int(round(task.cloud_density * area)))
    xy = rng.uniform(-TABLE_HALF_XY, TABLE_HALF_XY, (count, 2))
    return np.column_stack([xy, np.zeros(count)])
