"""File formats: demonstration JSON-lines, task JSON, results CSV, manifest."""

from __future__ import annotations

import csv
import json
import os
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from ..se3 import Pose
from ..segmenter import segment_rule_based
from ..state import ProprioFrame, TrajectoryState
from ..cloud import LabeledCloud
from .expert import Demonstration
from .tasks import GoalSpec, ObjectSpec, TaskSpec
from .metrics import TrialResult

RESULT_FIELDS = ("model", "task", "level", "seed", "trial", "success",
                 "phases_completed")


def _pose_list(pose: Pose) -> list[float]:
    return [float(v) for v in pose.matrix.reshape(16)]


def _pose_from_list(values) -> Pose:
    return Pose.from_matrix(np.asarray(values, dtype=np.float64).reshape(4, 4))


def save_demo(demo: Demonstration, path: str) -> None:
    """One frame per line: t, gripper, joint velocities, 16-scalar pose,
    attached instance and the labeled points."""
    with open(path, "w", encoding="utf-8") as fh:
        for state in demo.states:
            p = state.proprio
            record = {
                "t": p.timestep,
                "gripper_open": p.gripper_open,
                "joint_velocities": [float(v) for v in p.joint_velocities],
                "ee_pose": _pose_list(p.ee_pose),
                "attached": state.attached_instance,
                "points": [[float(x), float(y), float(z), int(i), int(c)]
                           for (x, y, z), i, c in zip(state.cloud.points.tolist(),
                                                      state.cloud.instance_id,
                                                      state.cloud.class_id)],
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_demo(path: str, task: TaskSpec) -> Demonstration:
    states = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            pts = np.asarray([row[:3] for row in record["points"]], dtype=np.float64)
            inst = np.asarray([row[3] for row in record["points"]], dtype=np.int64)
            cls = np.asarray([row[4] for row in record["points"]], dtype=np.int64)
            proprio = ProprioFrame(
                int(record["t"]), bool(record["gripper_open"]),
                np.asarray(record["joint_velocities"], dtype=np.float64),
                _pose_from_list(record["ee_pose"]))
            attached = record["attached"]
            states.append(TrajectoryState(LabeledCloud(pts, inst, cls), proprio,
                                          None if attached is None else int(attached)))
    decomposition = segment_rule_based([s.proprio for s in states])
    return Demonstration(task, tuple(states), decomposition, object_poses=None)


def save_task(task: TaskSpec, path: str) -> None:
    data = {
        "task_id": task.task_id,
        "level": task.level,
        "n_interactions": task.n_interactions,
        "rng_seed": task.rng_seed,
        "cloud_density": task.cloud_density,
        "min_object_points": task.min_object_points,
        "objects": [
            {
                "instance_id": o.instance_id,
                "class_id": o.class_id,
                "extents": [float(v) for v in o.extents],
                "pose": _pose_list(o.pose),
            }
            for o in task.objects
        ],
        "goals": [
            {
                "instance_id": g.instance_id,
                "target_pose": _pose_list(g.target_pose),
                "tolerance_pos": g.tolerance_pos,
                "tolerance_rot": g.tolerance_rot,
                "anchor_instance": g.anchor_instance,
            }
            for g in task.goals
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def load_task(path: str) -> TaskSpec:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    objects = tuple(
        ObjectSpec(o["instance_id"], o["class_id"],
                   np.asarray(o["extents"], dtype=np.float64),
                   _pose_from_list(o["pose"]))
        for o in data["objects"])
    goals = tuple(
        GoalSpec(g["instance_id"], _pose_from_list(g["target_pose"]),
                 g["tolerance_pos"], g["tolerance_rot"], g["anchor_instance"])
        for g in data["goals"])
    return TaskSpec(data["task_id"], data["level"], data["n_interactions"],
                    objects, goals, data["rng_seed"],
                    data["cloud_density"], data["min_object_points"])


def write_results_csv(results: list[tuple[str, TrialResult]], path: str) -> None:
    """Rows of (model, trial result), sorted for order-independence."""
    rows = sorted(
        (model, r.task_id, r.level, r.seed, r.trial, int(r.success),
         r.phases_completed)
        for model, r in results)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_FIELDS)
        writer.writerows(rows)


def read_results_csv(path: str) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULT_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            out.append({
                "model": row["model"],
                "task": row["task"],
                "level": int(row["level"]),
                "seed": int(row["seed"]),
                "trial": int(row["trial"]),
                "success": bool(int(row["success"])),
                "phases_completed": int(row["phases_completed"]),
            })
    return out


def write_manifest(out_dir: str, config_path: Optional[str], config_snapshot: dict,
                   tool_version: str) -> str:
    """Write the run manifest before any trial starts."""
    manifest = {
        "config_path": config_path,
        "config": config_snapshot,
        "output_dir": os.path.abspath(out_dir),
        "tool_version": tool_version,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def save_metrics_json(report_dict: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_dict, fh, indent=2)
        fh.write("\n")
