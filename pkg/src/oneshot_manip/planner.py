"""RRT-Connect planning for a free-flying gripper box among axis-aligned
obstacles, with separating-axis collision tests and shortcut smoothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .se3 import Pose, quat_from_rotation, rotation_from_quat, slerp_quat

Array = NDArray[np.float64]


class StartInCollision(ValueError):
    pass


class GoalInCollision(ValueError):
    pass


class PlanningTimeout(RuntimeError):
    pass


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by min/max corners in meters."""

    min_corner: Array
    max_corner: Array

    def __post_init__(self) -> None:
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("box corners must be 3-vectors")
        if np.any(hi < lo):
            raise ValueError("max corner must dominate min corner")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def center(self) -> Array:
        return (self.min_corner + self.max_corner) / 2.0

    @property
    def halfextents(self) -> Array:
        return (self.max_corner - self.min_corner) / 2.0

    def overlaps(self, other: "Box") -> bool:
        return bool(np.all(self.min_corner <= other.max_corner)
                    and np.all(other.min_corner <= self.max_corner))

    @classmethod
    def from_center(cls, center, halfextents) -> "Box":
        center = np.asarray(center, dtype=np.float64)
        halfextents = np.asarray(halfextents, dtype=np.float64)
        return cls(center - halfextents, center + halfextents)


@dataclass(frozen=True)
class WorldModel:
    """Obstacles, workspace bounds and gripper collision geometry."""

    obstacles: tuple[Box, ...]
    workspace: Box
    gripper_halfextents: Array

    def __post_init__(self) -> None:
        he = np.asarray(self.gripper_halfextents, dtype=np.float64)
        if he.shape != (3,) or np.any(he <= 0.0):
            raise ValueError("gripper halfextents must be positive 3-vector")
        obstacles = tuple(self.obstacles)
        for i, box in enumerate(obstacles):
            if not box.overlaps(self.workspace):
                raise ValueError(f"obstacle {i} lies outside the workspace")
        object.__setattr__(self, "obstacles", obstacles)
        object.__setattr__(self, "gripper_halfextents", he)
        centers = (np.stack([b.center for b in obstacles])
                   if obstacles else np.zeros((0, 3)))
        halves = (np.stack([b.halfextents for b in obstacles])
                  if obstacles else np.zeros((0, 3)))
        object.__setattr__(self, "_obstacle_centers", centers)
        object.__setattr__(self, "_obstacle_halves", halves)


def _hits_any_obstacle(centers: Array, halves: Array, center: Array,
                       rotation: Array, h: Array) -> bool:
    """Vectorized 15-axis separating-axis test against all obstacle boxes."""
    if centers.shape[0] == 0:
        return False
    t = center - centers
    e = halves
    r = rotation
    absr = np.abs(r) + 1e-12

    separated = np.zeros(centers.shape[0], dtype=bool)
    # World axes.
    reach = absr @ h
    for i in range(3):
        separated |= np.abs(t[:, i]) > e[:, i] + reach[i]
    # Gripper axes.
    proj = t @ r
    for j in range(3):
        separated |= np.abs(proj[:, j]) > h[j] + e @ absr[:, j]
    # Cross products of axis pairs.
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            ra = e[:, i1] * absr[i2, j] + e[:, i2] * absr[i1, j]
            rb = h[j1] * absr[i, j2] + h[j2] * absr[i, j1]
            lhs = np.abs(t[:, i2] * r[i1, j] - t[:, i1] * r[i2, j])
            separated |= lhs > ra + rb
    return bool(np.any(~separated))


def collides(world: WorldModel, pose: Pose, allow_collision: bool = False) -> bool:
    """Whether the gripper box at `pose` hits an obstacle or exits the workspace."""
    if allow_collision:
        return False
    center = pose.translation
    rotation = pose.rotation
    he = world.gripper_halfextents
    reach = np.abs(rotation) @ he
    ws = world.workspace
    if (np.any(center - reach < ws.min_corner)
            or np.any(center + reach > ws.max_corner)):
        return True
    return _hits_any_obstacle(world._obstacle_centers, world._obstacle_halves,
                              center, rotation, he)


def _state_collides(world: WorldModel, pos: Array, quat: Array) -> bool:
    rotation = rotation_from_quat(quat)
    he = world.gripper_halfextents
    reach = np.abs(rotation) @ he
    ws = world.workspace
    if (np.any(pos - reach < ws.min_corner)
            or np.any(pos + reach > ws.max_corner)):
        return True
    return _hits_any_obstacle(world._obstacle_centers, world._obstacle_halves,
                              pos, rotation, he)


@dataclass(frozen=True)
class PlanConfig:
    step_size: float = 0.05
    max_iterations: int = 20000
    goal_bias: float = 0.1
    rng_seed: int = 0
    rotation_weight: float = 0.1
    angular_step: float = 0.3

    def __post_init__(self) -> None:
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if not 0.0 < self.goal_bias < 1.0:
            raise ValueError("goal_bias must lie in (0, 1)")


def _quat_angles(quats: Array, quat: Array) -> Array:
    dots = np.abs(quats @ quat)
    return 2.0 * np.arccos(np.minimum(1.0, dots))


def _interp_state(a_pos, a_quat, b_pos, b_quat, t: float):
    return ((1.0 - t) * a_pos + t * b_pos), slerp_quat(a_quat, b_quat, t)


def _edge_free(world: WorldModel, a_pos, a_quat, b_pos, b_quat,
               resolution: float, rotation_weight: float) -> bool:
    dist = (float(np.linalg.norm(b_pos - a_pos))
            + rotation_weight * float(_quat_angles(b_quat[None], a_quat)[0]))
    steps = max(1, int(math.ceil(dist / resolution)))
    for s in range(1, steps + 1):
        pos, quat = _interp_state(a_pos, a_quat, b_pos, b_quat, s / steps)
        if _state_collides(world, pos, quat):
            return False
    return True


class _Tree:
    def __init__(self, root_pos: Array, root_quat: Array, capacity: int = 256):
        self.positions = np.zeros((capacity, 3))
        self.quats = np.zeros((capacity, 4))
        self.parents = np.full(capacity, -1, dtype=np.int64)
        self.positions[0] = root_pos
        self.quats[0] = root_quat
        self.size = 1

    def nearest(self, pos: Array, quat: Array, rotation_weight: float) -> int:
        d = (np.linalg.norm(self.positions[:self.size] - pos, axis=1)
             + rotation_weight * _quat_angles(self.quats[:self.size], quat))
        return int(np.argmin(d))

    def add(self, pos: Array, quat: Array, parent: int) -> int:
        if self.size == self.positions.shape[0]:
            grow = self.positions.shape[0]
            self.positions = np.vstack([self.positions, np.zeros((grow, 3))])
            self.quats = np.vstack([self.quats, np.zeros((grow, 4))])
            self.parents = np.concatenate([self.parents,
                                           np.full(grow, -1, dtype=np.int64)])
        idx = self.size
        self.positions[idx] = pos
        self.quats[idx] = quat
        self.parents[idx] = parent
        self.size += 1
        return idx

    def path_from_root(self, index: int) -> list[tuple[Array, Array]]:
        chain = []
        cursor = index
        while cursor >= 0:
            chain.append((self.positions[cursor].copy(), self.quats[cursor].copy()))
            cursor = int(self.parents[cursor])
        chain.reverse()
        return chain


def plan_rrt_connect(world: WorldModel, start: Pose, goal: Pose,
                     cfg: PlanConfig, allow_collision: bool = False) -> list[Pose]:
    """Collision-free waypoint path from start to goal.

    Grows two trees over (position, orientation) states, steering translation
    by step_size and orientation by slerp limited to angular_step; edges are
    validated at a step_size/8 interpolation resolution (finer than the
    step_size/4 contract, so an external re-check at twice the contract
    density agrees) and the joined path is shortcut-smoothed. Deterministic
    for a fixed cfg.rng_seed.

    With allow_collision=True checking is bypassed and the straight segment is
    returned.
    """
    if allow_collision:
        return [start, goal]
    if collides(world, start):
        raise StartInCollision("start pose is in collision")
    if collides(world, goal):
        raise GoalInCollision("goal pose is in collision")

    rng = np.random.default_rng(cfg.rng_seed)
    resolution = cfg.step_size / 8.0
    rw = cfg.rotation_weight

    start_state = (start.translation.copy(), quat_from_rotation(start.rotation))
    goal_state = (goal.translation.copy(), quat_from_rotation(goal.rotation))

    if _edge_free(world, *start_state, *goal_state, resolution, rw):
        return [start, goal]

    tree_a = _Tree(*start_state)
    tree_b = _Tree(*goal_state)
    a_is_start = True
    lo = world.workspace.min_corner
    hi = world.workspace.max_corner

    def sample(target_root):
        if rng.random() < cfg.goal_bias:
            return target_root
        pos = rng.uniform(lo, hi)
        if rng.random() < 0.5:
            # Orientations along the start-goal arc keep narrow passages
            # passable for mostly-translational problems.
            quat = slerp_quat(start_state[1], goal_state[1], rng.random())
        else:
            quat = rng.normal(size=4)
            quat /= np.linalg.norm(quat)
            if quat[0] < 0.0:
                quat = -quat
        return pos, quat

    def steer(from_pos, from_quat, to_pos, to_quat):
        delta = float(np.linalg.norm(to_pos - from_pos))
        angle = float(_quat_angles(to_quat[None], from_quat)[0])
        frac = 1.0
        if delta > cfg.step_size:
            frac = min(frac, cfg.step_size / delta)
        if angle > cfg.angular_step:
            frac = min(frac, cfg.angular_step / angle)
        return _interp_state(from_pos, from_quat, to_pos, to_quat, frac)

    def extend(tree: _Tree, to_pos, to_quat):
        """Returns (status, node_index); status in {trapped, advanced, reached}."""
        near = tree.nearest(to_pos, to_quat, rw)
        near_pos = tree.positions[near]
        near_quat = tree.quats[near]
        new_pos, new_quat = steer(near_pos, near_quat, to_pos, to_quat)
        if not _edge_free(world, near_pos, near_quat, new_pos, new_quat,
                          resolution, rw):
            return "trapped", near
        idx = tree.add(new_pos, new_quat, near)
        remaining = (float(np.linalg.norm(to_pos - new_pos))
                     + rw * float(_quat_angles(to_quat[None], new_quat)[0]))
        if remaining < 1e-9:
            return "reached", idx
        return "advanced", idx

    joined: Optional[tuple[int, int, bool]] = None
    for _ in range(cfg.max_iterations):
        grow, connect_tree = (tree_a, tree_b) if a_is_start else (tree_b, tree_a)
        target_root = goal_state if a_is_start else start_state
        pos, quat = sample(target_root)
        status, new_idx = extend(grow, pos, quat)
        if status != "trapped":
            node_pos = grow.positions[new_idx]
            node_quat = grow.quats[new_idx]
            while True:
                c_status, c_idx = extend(connect_tree, node_pos, node_quat)
                if c_status == "reached":
                    joined = (new_idx, c_idx, a_is_start)
                    break
                if c_status == "trapped":
                    break
        if joined is not None:
            break
        a_is_start = not a_is_start

    if joined is None:
        raise PlanningTimeout(f"no path after {cfg.max_iterations} iterations")

    grow_idx, connect_idx, grew_start = joined
    if grew_start:
        fwd = tree_a.path_from_root(grow_idx)
        bwd = tree_b.path_from_root(connect_idx)
    else:
        fwd = tree_a.path_from_root(connect_idx)
        bwd = tree_b.path_from_root(grow_idx)
    states = fwd + bwd[::-1]

    states = _shortcut(world, states, cfg, rng)
    path = [start]
    for pos, quat in states[1:-1]:
        path.append(Pose(rotation_from_quat(quat), pos))
    path.append(goal)
    return path


def _shortcut(world: WorldModel, states, cfg: PlanConfig, rng) -> list:
    attempts = max(0, min(cfg.max_iterations // 10, 50))
    resolution = cfg.step_size / 8.0
    states = list(states)
    for _ in range(attempts):
        if len(states) <= 2:
            break
        i = int(rng.integers(0, len(states)))
        j = int(rng.integers(0, len(states)))
        if abs(i - j) < 2:
            continue
        i, j = min(i, j), max(i, j)
        if _edge_free(world, *states[i], *states[j], resolution, cfg.rotation_weight):
            states = states[:i + 1] + states[j:]
    return states


def path_to_actions(path: Sequence[Pose], gripper_open: bool,
                    allow_collision: bool):
    """Waypoints as 18-scalar actions carrying the commanding action's flags."""
    from .se3 import Action

    return [Action(p, gripper_open, allow_collision) for p in path]


def serialize_path(path: Sequence[Pose], gripper_open: bool,
                   allow_collision: bool) -> str:
    """JSON list of 18-scalar action vectors."""
    import json

    actions = path_to_actions(path, gripper_open, allow_collision)
    return json.dumps([[float(v) for v in a.to_vector()] for a in actions])
