"""Synthetic tabletop benchmark: task generation, scripted expert,
closed-loop rollout execution, metrics."""

from .expert import CYCLE_FRAMES, Demonstration, ExpertPlanningFailed, scripted_expert
from .harness import build_task_and_demo, run_grid, run_task_trials
from .metrics import (GridMismatch, MetricsReport, TrialResult, compute_metrics,
                      fractional_ranks, results_to_table)
from .rollout import (DemoAnnotation, annotate_demo, execute_rollout,
                      perturb_layout)
from .tasks import (GoalSpec, ObjectSpec, TaskSpec, generate_task,
                    object_base_points, sample_box_surface, table_points)
from .world import KinematicWorld, hover_above, plan_phase_motion, resample_legs

__all__ = [
    "CYCLE_FRAMES", "Demonstration", "ExpertPlanningFailed", "scripted_expert",
    "build_task_and_demo", "run_grid", "run_task_trials",
    "GridMismatch", "MetricsReport", "TrialResult", "compute_metrics",
    "fractional_ranks", "results_to_table",
    "DemoAnnotation", "annotate_demo", "execute_rollout", "perturb_layout",
    "GoalSpec", "ObjectSpec", "TaskSpec", "generate_task",
    "object_base_points", "sample_box_surface", "table_points",
    "KinematicWorld", "hover_above", "plan_phase_motion", "resample_legs",
]
