"""Scripted expert demonstrator with fixed per-leg frame budgets.

Every motion leg is resampled to a constant number of frames, so all
demonstrations of a level share the same length and phase boundaries sit at
the same timesteps. That alignment is what makes same-timestep state pairing
across layouts valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..planner import (GoalInCollision, PlanConfig, PlanningTimeout,
                       StartInCollision)
from ..se3 import Pose, WeightedPointSet, solve_weighted_procrustes
from ..segmenter import Decomposition, InteractionPhase, PhaseKind, Source
from ..state import ProprioFrame, TrajectoryState
from .tasks import TABLE_INSTANCE, TRANSIT_Z, TaskSpec, object_base_points
from .world import KinematicWorld, plan_phase_motion, resample_legs

PRE_TRANSIT_FRAMES = 10
PRE_DESCEND_FRAMES = 4
GRASP_FRAMES = 2
POST_ASCEND_FRAMES = 4
POST_TRANSIT_FRAMES = 10
POST_DESCEND_FRAMES = 4

PRE_FRAMES = PRE_TRANSIT_FRAMES + PRE_DESCEND_FRAMES + 1
POST_FRAMES = POST_ASCEND_FRAMES + POST_TRANSIT_FRAMES + POST_DESCEND_FRAMES + 1
CYCLE_FRAMES = PRE_FRAMES + GRASP_FRAMES + POST_FRAMES

HOME_POSE = Pose.from_translation((0.0, 0.0, TRANSIT_Z))

_JOINT_PATTERN = np.array([0.5, 0.3, 0.1, 0.05, 0.02, 0.01, 0.005])
_SPEED_SCALE = 20.0


class ExpertPlanningFailed(RuntimeError):
    pass


@dataclass
class Demonstration:
    """Expert trajectory plus its scripted phase boundaries."""

    task: TaskSpec
    states: tuple[TrajectoryState, ...]
    true_phases: Decomposition
    object_poses: Optional[tuple[dict[int, Pose], ...]] = None
    _pose_cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.states)

    def frames(self) -> list[ProprioFrame]:
        return [s.proprio for s in self.states]

    def action_pose(self, phase: InteractionPhase) -> Pose:
        return self.states[phase.end].proprio.ee_pose

    def object_pose(self, timestep: int, instance: int) -> Pose:
        """Object pose at a frame; recovered from the cloud slice when the
        demonstration was loaded from disk (exact for noise-free sampling)."""
        if instance == TABLE_INSTANCE:
            return Pose.identity()
        if self.object_poses is not None:
            return self.object_poses[timestep][instance]
        key = (timestep, instance)
        if key not in self._pose_cache:
            base = object_base_points(self.task, instance)
            cloud = self.states[timestep].cloud
            idx = cloud.instance_indices(instance)
            if idx.size != base.shape[0]:
                raise ValueError(f"instance {instance} slice size mismatch")
            self._pose_cache[key] = solve_weighted_procrustes(
                WeightedPointSet.uniform(base),
                WeightedPointSet.uniform(cloud.points[idx]))
        return self._pose_cache[key]


def _proprio(t: int, gripper_open: bool, speed: float, pose: Pose) -> ProprioFrame:
    return ProprioFrame(t, gripper_open, _JOINT_PATTERN * (speed * _SPEED_SCALE), pose)


def scripted_expert(task: TaskSpec,
                    poses: Optional[dict[int, Pose]] = None,
                    goals: Optional[Sequence[Pose]] = None,
                    plan_seed_key: int = 0,
                    plan_config: Optional[PlanConfig] = None,
                    noise_sigma: float = 0.0) -> Demonstration:
    """Run the scripted pick-and-place expert and record the demonstration.

    `poses` overrides spawn poses and `goals` the per-goal target poses (both
    used for perturbed auxiliary layouts); defaults replay the task as
    generated.
    """
    world = KinematicWorld(task, poses)
    targets = list(goals) if goals is not None else [g.target_pose for g in task.goals]
    if len(targets) != len(task.goals):
        raise ValueError("need one target pose per goal")

    seed_rng = np.random.default_rng([31, task.level, task.rng_seed, plan_seed_key])
    noise_rng = np.random.default_rng([37, task.level, task.rng_seed, plan_seed_key])
    base_cfg = plan_config or PlanConfig()

    states: list[TrajectoryState] = []
    object_poses: list[dict[int, Pose]] = []
    phases: list[InteractionPhase] = []
    ee = HOME_POSE

    def emit(pose: Pose, is_open: bool, speed: float) -> None:
        world.carry_to(pose)
        t = len(states)
        cloud = world.sample_cloud(noise_sigma, noise_rng)
        states.append(TrajectoryState(cloud, _proprio(t, is_open, speed, pose),
                                      world.attached))
        object_poses.append(dict(world.poses))

    def emit_path(path: Sequence[Pose], is_open: bool) -> None:
        nonlocal ee
        for pose in path:
            speed = float(np.linalg.norm(pose.translation - ee.translation))
            emit(pose, is_open, speed)
            ee = pose

    def plan_cfg() -> PlanConfig:
        return PlanConfig(step_size=base_cfg.step_size,
                          max_iterations=base_cfg.max_iterations,
                          goal_bias=base_cfg.goal_bias,
                          rng_seed=int(seed_rng.integers(2 ** 31)),
                          rotation_weight=base_cfg.rotation_weight,
                          angular_step=base_cfg.angular_step)

    for goal_index, goal in enumerate(task.goals):
        instance = goal.instance_id
        obj = task.object(instance)
        grasp = world.poses[instance].compose(obj.grasp_offset())
        release = targets[goal_index].compose(obj.grasp_offset())
        cycle_start = len(states)

        try:
            legs = plan_phase_motion(world, ee, grasp, plan_cfg())
        except (PlanningTimeout, StartInCollision, GoalInCollision) as exc:
            raise ExpertPlanningFailed(f"pre-contact leg {goal_index}: {exc}") from exc
        approach = resample_legs(legs[:2], PRE_TRANSIT_FRAMES, fallback=ee)
        descend = resample_legs(legs[2:], PRE_DESCEND_FRAMES, fallback=grasp)
        emit_path(approach, True)
        emit_path(descend, True)
        emit(grasp, True, 0.0)
        ee = grasp
        phases.append(InteractionPhase(PhaseKind.PRE_CONTACT, cycle_start,
                                       len(states) - 1))

        grasp_start = len(states)
        world.attach(instance, grasp)
        for _ in range(GRASP_FRAMES):
            emit(grasp, False, 0.0)
        phases.append(InteractionPhase(PhaseKind.GRASPING, grasp_start,
                                       len(states) - 1))

        post_start = len(states)
        try:
            legs = plan_phase_motion(world, grasp, release, plan_cfg())
        except (PlanningTimeout, StartInCollision, GoalInCollision) as exc:
            raise ExpertPlanningFailed(f"post-contact leg {goal_index}: {exc}") from exc
        ascend = resample_legs(legs[:1], POST_ASCEND_FRAMES, fallback=grasp)
        transit = resample_legs(legs[1:2], POST_TRANSIT_FRAMES, fallback=grasp)
        descend = resample_legs(legs[2:], POST_DESCEND_FRAMES, fallback=release)
        emit_path(ascend, False)
        emit_path(transit, False)
        emit_path(descend, False)
        world.detach()
        emit(release, True, 0.0)
        ee = release
        phases.append(InteractionPhase(PhaseKind.POST_CONTACT, post_start,
                                       len(states) - 1))

    return Demonstration(task, tuple(states),
                         Decomposition(tuple(phases), Source.RULE_BASED),
                         tuple(object_poses))
