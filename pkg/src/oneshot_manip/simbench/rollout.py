"""Closed-loop one-shot execution: perturb the scene, then per phase route to
a demonstration macro-step, match its invariant region against the live
observation, regress the target pose, plan and execute.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from ..cloud import DescriptorSet, point_descriptors, scene_descriptor
from ..config import BenchmarkConfig
from ..invariant import (InvariantRegion, NoFeasibleSegment, StatePair,
                         gt_correspondences, gt_invariant_region)
from ..matcher import (CorrespondenceMatrix, InsufficientMatches, RoutingQuery,
                       dual_softmax, regress_pose, route_state)
from ..planner import (GoalInCollision, PlanConfig, PlanningTimeout,
                       StartInCollision)
from ..se3 import DegenerateInput, Pose, geodesic_angle
from ..segmenter import (Decomposition, InteractionPhase, PhaseKind,
                         sample_macro_steps, segment_rule_based)
from ..state import ProprioFrame, TrajectoryState
from .expert import Demonstration, scripted_expert
from .metrics import TrialResult
from .tasks import TABLE_INSTANCE, TaskSpec, _footprint_radius
from .world import KinematicWorld, plan_phase_motion

Array = NDArray[np.float64]


@dataclass
class MacroAnnotation:
    timestep: int
    region: Optional[InvariantRegion]
    routing: RoutingQuery


@dataclass
class PhaseAnnotation:
    phase: InteractionPhase
    action_pose: Pose
    macros: list[MacroAnnotation]


@dataclass
class DemoAnnotation:
    decomposition: Decomposition
    phases: list[PhaseAnnotation]
    demo_len: int
    descriptor_cache: dict

    def to_dict(self) -> dict:
        """Annotation-file form: per phase, the action pose and the invariant
        region of every macro step."""
        return {
            "demo_len": self.demo_len,
            "phases": [
                {
                    "kind": pa.phase.kind.value,
                    "start": pa.phase.start,
                    "end": pa.phase.end,
                    "action_pose": [float(v) for v in pa.action_pose.matrix.reshape(16)],
                    "macro_steps": [
                        {
                            "t": m.timestep,
                            "region": None if m.region is None else m.region.to_dict(),
                        }
                        for m in pa.macros
                    ],
                }
                for pa in self.phases
            ],
        }


def perturb_layout(task: TaskSpec, pos_noise: float, rot_noise: float,
                   rng) -> tuple[dict[int, Pose], list[Pose]]:
    """Per-object xy/yaw spawn perturbation plus anchor-corrected goal poses.

    Redraws an object's perturbation when its conservative footprint circle
    would intersect an already-placed one.
    """
    spawn = {o.instance_id: o.pose for o in task.objects}
    poses: dict[int, Pose] = {}
    placed: list[tuple[Array, Array]] = []
    for obj in task.objects:
        base = spawn[obj.instance_id]
        candidate = base
        for _ in range(20):
            dx, dy = rng.uniform(-pos_noise, pos_noise, 2)
            dyaw = rng.uniform(-rot_noise, rot_noise)
            candidate = Pose(
                Pose.rot_z(dyaw).rotation @ base.rotation,
                base.translation + np.array([dx, dy, 0.0]))
            ok = True
            radius = _footprint_radius(obj.extents)
            for other_pos, other_ext in placed:
                if (math.hypot(candidate.translation[0] - other_pos[0],
                               candidate.translation[1] - other_pos[1])
                        < radius + _footprint_radius(other_ext)):
                    ok = False
                    break
            if ok:
                break
        poses[obj.instance_id] = candidate
        placed.append((candidate.translation, obj.extents))

    goals = []
    for goal in task.goals:
        if goal.anchor_instance is None:
            goals.append(goal.target_pose)
        else:
            anchor_shift = poses[goal.anchor_instance].compose(
                spawn[goal.anchor_instance].inverse())
            goals.append(anchor_shift.compose(goal.target_pose))
    return poses, goals


def annotate_demo(task: TaskSpec, demo: Demonstration,
                  config: BenchmarkConfig) -> DemoAnnotation:
    """Precompute per-macro-step regions and routing features for a demo.

    Invariant regions are extracted against auxiliary expert runs on perturbed
    layouts of the same task; equal frame budgets make same-timestep pairing
    valid.
    """
    pipeline = config.pipeline
    bench = config.benchmark
    frames = [s.proprio for s in demo.states]
    decomposition = segment_rule_based(frames, pipeline.v_zero_threshold)

    aux_demos = []
    for a in range(pipeline.annotation_pairs):
        rng = np.random.default_rng([43, task.level, task.rng_seed, a])
        aux_poses, aux_goals = perturb_layout(
            task, bench.perturbation_pos, bench.perturbation_rot, rng)
        aux = scripted_expert(task, poses=aux_poses, goals=aux_goals,
                              plan_seed_key=1000 + a)
        if len(aux) != len(demo):
            raise RuntimeError("auxiliary demo length mismatch")
        aux_demos.append(aux)

    vocab = task.class_vocabulary
    total = len(demo)
    phases = []
    for phase in decomposition.phases:
        action_pose = demo.action_pose(phase)
        macros = []
        for t in sample_macro_steps(phase, pipeline.stride):
            pairs = [StatePair(demo.states[t], aux.states[t], action_pose,
                               aux.action_pose(phase))
                     for aux in aux_demos]
            try:
                region = gt_invariant_region(pairs, phase.kind) if pairs else None
            except NoFeasibleSegment:
                region = None
            routing = RoutingQuery(
                scene_descriptor(demo.states[t].cloud, vocab),
                demo.states[t].proprio.gripper_open,
                t / max(total - 1, 1))
            macros.append(MacroAnnotation(t, region, routing))
        phases.append(PhaseAnnotation(phase, action_pose, macros))
    return DemoAnnotation(decomposition, phases, total, {})


def _prepare_matching_descriptors(region_vectors: Array, scene_vectors: Array,
                                  class_weight: float,
                                  normalize: bool) -> tuple[DescriptorSet, DescriptorSet]:
    """Standardize jointly, boost the class feature, L2-normalize rows."""
    if not normalize:
        return DescriptorSet(region_vectors), DescriptorSet(scene_vectors)
    stacked = np.vstack([region_vectors, scene_vectors])
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-9)
    region = (region_vectors - mean) / std
    scene = (scene_vectors - mean) / std
    region[:, -1] *= class_weight
    scene[:, -1] *= class_weight
    region /= np.maximum(np.linalg.norm(region, axis=1, keepdims=True), 1e-12)
    scene /= np.maximum(np.linalg.norm(scene, axis=1, keepdims=True), 1e-12)
    return DescriptorSet(region), DescriptorSet(scene)


def _oracle_pose(annotation: DemoAnnotation, demo: Demonstration,
                 macro: MacroAnnotation, phase_pose: Pose,
                 current: TrajectoryState, world: KinematicWorld) -> Optional[Pose]:
    """Target pose from ground-truth correspondences on the region instance."""
    region = macro.region
    if region is None:
        return None
    instance = region.segment_instance_id
    scene_idx = current.cloud.instance_indices(instance)
    if scene_idx.size == 0:
        return None
    region_b = InvariantRegion(current, scene_idx, instance)
    demo_obj = demo.object_pose(macro.timestep, instance)
    live_obj = (Pose.identity() if instance == TABLE_INSTANCE
                else world.poses[instance])
    pairs = gt_correspondences(region, region_b, demo_obj, live_obj)

    a_lookup = {int(idx): row for row, idx in enumerate(region.point_indices)}
    b_lookup = {int(idx): col for col, idx in enumerate(scene_idx)}
    soft = np.zeros((len(region), scene_idx.size))
    binary = []
    for a_idx, b_idx in pairs:
        i, j = a_lookup[a_idx], b_lookup[b_idx]
        soft[i, j] = 1.0
        binary.append((i, j))
    corr = CorrespondenceMatrix(soft, tuple(binary), len(region), scene_idx.size)
    try:
        return regress_pose(corr, region.points, current.cloud.points[scene_idx],
                            phase_pose)
    except (DegenerateInput, InsufficientMatches):
        return None


def _descriptor_pose(annotation: DemoAnnotation, demo: Demonstration,
                     macro: MacroAnnotation, phase_pose: Pose,
                     current: TrajectoryState, scene_desc: DescriptorSet,
                     config: BenchmarkConfig) -> Optional[Pose]:
    """Target pose from dual-softmax matching of handcrafted descriptors."""
    region = macro.region
    if region is None:
        return None
    pipeline = config.pipeline
    cache = annotation.descriptor_cache
    if macro.timestep not in cache:
        cache[macro.timestep] = point_descriptors(
            demo.states[macro.timestep].cloud, pipeline.knn_k)
    demo_desc = cache[macro.timestep]

    h_region, h_scene = _prepare_matching_descriptors(
        demo_desc.vectors[region.point_indices], scene_desc.vectors,
        pipeline.class_weight, pipeline.normalize_descriptors)
    soft = dual_softmax(h_region, h_scene, pipeline.temperature)
    corr = CorrespondenceMatrix.from_soft(soft, pipeline.match_threshold)
    if len(corr.binary) < 3:
        # Starved by the confidence threshold: keep mutual-nearest pairs only.
        corr = CorrespondenceMatrix.from_soft(soft, 1e-9)
    try:
        return regress_pose(corr, region.points, current.cloud.points, phase_pose)
    except (DegenerateInput, InsufficientMatches):
        return None


def _random_pose(rng) -> Pose:
    pos = rng.uniform([-0.45, -0.45, 0.05], [0.45, 0.45, 0.45])
    return Pose.rot_z(float(rng.uniform(-math.pi, math.pi)), pos)


def execute_rollout(task: TaskSpec, demo: Demonstration, config: BenchmarkConfig,
                    seed: int, trial: int,
                    annotation: Optional[DemoAnnotation] = None,
                    mode: Optional[str] = None) -> TrialResult:
    """One perturbed trial of the full pipeline; failures are recorded, not raised."""
    t_start = time.perf_counter()
    pipeline = config.pipeline
    bench = config.benchmark
    mode = mode or pipeline.mode
    if annotation is None:
        annotation = annotate_demo(task, demo, config)

    rng = np.random.default_rng([53, task.level, task.rng_seed, seed, trial])
    poses, eff_goals = perturb_layout(task, bench.perturbation_pos,
                                      bench.perturbation_rot, rng)
    world = KinematicWorld(task, poses)
    ee = demo.states[0].proprio.ee_pose
    vocab = task.class_vocabulary

    plan_cfg_proto = config.planner
    total = annotation.demo_len
    phases_completed = 0
    failed = False

    # The scene only changes while an object is carried; reuse the sampled
    # cloud and its descriptors across observations of an unchanged world.
    observation_cache: dict = {}

    def observe_cloud():
        key = world.version
        if bench.cloud_noise_sigma > 0.0 or key not in observation_cache:
            observation_cache.clear()
            observation_cache[key] = (
                world.sample_cloud(bench.cloud_noise_sigma, rng), None)
        return observation_cache[key][0]

    def observe_descriptors(cloud):
        key = world.version
        cached = observation_cache.get(key)
        if cached is None or cached[0] is not cloud or cached[1] is None:
            desc = point_descriptors(cloud, pipeline.knn_k)
            observation_cache[key] = (cloud, desc)
        return observation_cache[key][1]

    for phase_ann in annotation.phases:
        phase = phase_ann.phase
        gripper_open = phase.kind is not PhaseKind.POST_CONTACT

        cloud = observe_cloud()
        current = TrajectoryState(
            cloud,
            ProprioFrame(phase.start, gripper_open, np.zeros(7), ee),
            world.attached)

        if pipeline.routing_enabled and len(phase_ann.macros) > 1:
            query = RoutingQuery(scene_descriptor(cloud, vocab), gripper_open,
                                 phase.start / max(total - 1, 1))
            routed = route_state(query, [m.routing for m in phase_ann.macros],
                                 pipeline.gripper_weight).demo_index
        else:
            routed = len(phase_ann.macros) - 1
        macro = phase_ann.macros[routed]

        if mode == "random":
            target = _random_pose(rng)
        elif mode == "oracle":
            target = _oracle_pose(annotation, demo, macro, phase_ann.action_pose,
                                  current, world)
        else:
            target = _descriptor_pose(annotation, demo, macro,
                                      phase_ann.action_pose, current,
                                      observe_descriptors(cloud), config)
        if target is None:
            target = phase_ann.action_pose

        plan_cfg = PlanConfig(step_size=plan_cfg_proto.step_size,
                              max_iterations=plan_cfg_proto.max_iterations,
                              goal_bias=plan_cfg_proto.goal_bias,
                              rng_seed=int(rng.integers(2 ** 31)),
                              rotation_weight=plan_cfg_proto.rotation_weight,
                              angular_step=plan_cfg_proto.angular_step)
        try:
            legs = plan_phase_motion(world, ee, target, plan_cfg,
                                     allow_collision=True)
        except (PlanningTimeout, StartInCollision, GoalInCollision):
            failed = True
            break
        for leg in legs:
            for pose in leg.waypoints:
                world.carry_to(pose)
        ee = target
        world.carry_to(ee)

        effect_ok = True
        if phase.kind is PhaseKind.GRASPING:
            effect_ok = _try_attach(task, world, ee, pipeline.attach_tolerance)
        elif phase.kind is PhaseKind.POST_CONTACT:
            world.detach()
        if effect_ok:
            phases_completed += 1

    success = not failed and world.attached is None
    if success:
        for goal, eff_target in zip(task.goals, eff_goals):
            pose = world.poses[goal.instance_id]
            pos_err = float(np.linalg.norm(pose.translation - eff_target.translation))
            rot_err = geodesic_angle(pose.rotation, eff_target.rotation)
            if pos_err > goal.tolerance_pos or rot_err > goal.tolerance_rot:
                success = False
                break

    return TrialResult(task.task_id, task.level, seed, trial, success,
                       phases_completed, time.perf_counter() - t_start)


def _try_attach(task: TaskSpec, world: KinematicWorld, ee: Pose,
                tolerance: float) -> bool:
    """Close the gripper: attach the object whose grasp point is nearest."""
    best = None
    best_d = tolerance
    for obj in task.objects:
        grasp = world.poses[obj.instance_id].compose(obj.grasp_offset())
        d = float(np.linalg.norm(grasp.translation - ee.translation))
        if d < best_d:
            best = obj.instance_id
            best_d = d
    if best is None:
        return False
    world.attach(best, ee)
    return True
