"""Trial-grid execution across levels, seeds and trials, optionally parallel."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

from ..config import BenchmarkConfig
from .expert import Demonstration, scripted_expert
from .io import load_demo, load_task
from .metrics import TrialResult
from .rollout import annotate_demo, execute_rollout
from .tasks import TaskSpec, generate_task


def demo_filename(level: int, seed: int) -> str:
    return f"demo_L{level}_s{seed}.jsonl"


def task_filename(level: int, seed: int) -> str:
    return f"task_L{level}_s{seed}.json"


def build_task_and_demo(level: int, seed: int, config: BenchmarkConfig,
                        demo_dir: Optional[str] = None) -> tuple[TaskSpec, Demonstration]:
    """Load the (task, demo) pair from demo_dir when present, else generate."""
    bench = config.benchmark
    if demo_dir is not None:
        task_path = os.path.join(demo_dir, task_filename(level, seed))
        demo_path = os.path.join(demo_dir, demo_filename(level, seed))
        if os.path.exists(task_path) and os.path.exists(demo_path):
            task = load_task(task_path)
            return task, load_demo(demo_path, task)
    task = generate_task(level, seed, bench.cloud_density, bench.min_object_points,
                         bench.tolerance_pos, bench.tolerance_rot)
    return task, scripted_expert(task, noise_sigma=bench.cloud_noise_sigma)


def run_task_trials(level: int, seed: int, config: BenchmarkConfig,
                    mode: Optional[str] = None,
                    demo_dir: Optional[str] = None) -> list[TrialResult]:
    """All trials of one (level, seed) cell, sharing one demo annotation."""
    task, demo = build_task_and_demo(level, seed, config, demo_dir)
    annotation = annotate_demo(task, demo, config)
    return [execute_rollout(task, demo, config, seed, trial,
                            annotation=annotation, mode=mode)
            for trial in range(config.benchmark.trials)]


def _run_cell(args) -> list[TrialResult]:
    level, seed, config, mode, demo_dir = args
    return run_task_trials(level, seed, config, mode, demo_dir)


def run_grid(config: BenchmarkConfig, mode: Optional[str] = None,
             jobs: int = 1, demo_dir: Optional[str] = None,
             levels: Optional[tuple[int, ...]] = None) -> list[TrialResult]:
    """Run the whole (level, seed, trial) grid; results sorted for stability."""
    bench = config.benchmark
    cells = [(level, seed, config, mode, demo_dir)
             for level in (levels or bench.levels)
             for seed in bench.seeds]
    results: list[TrialResult] = []
    if jobs <= 1:
        for cell in cells:
            results.extend(_run_cell(cell))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for batch in pool.map(_run_cell, cells):
                results.extend(batch)
    results.sort(key=lambda r: (r.level, r.task_id, r.seed, r.trial))
    return results
