"""Trial records, success-rate aggregation and fractional model ranking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


class GridMismatch(ValueError):
    """Models were not evaluated on identical (task, seed) grids."""


@dataclass(frozen=True)
class TrialResult:
    task_id: str
    level: int
    seed: int
    trial: int
    success: bool
    phases_completed: int
    wall_time: float = 0.0


@dataclass(frozen=True)
class MetricsReport:
    """Per-task mean/std per model plus average success and average rank."""

    per_task: dict[str, dict[str, tuple[float, float]]]
    average_success: dict[str, float]
    average_rank: dict[str, float]
    tasks: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "tasks": list(self.tasks),
            "per_task": {m: {t: {"mean": mu, "std": sd}
                             for t, (mu, sd) in table.items()}
                         for m, table in self.per_task.items()},
            "average_success": dict(self.average_success),
            "average_rank": dict(self.average_rank),
        }


def fractional_ranks(values: Sequence[float]) -> list[float]:
    """Descending ranks with ties sharing their average position."""
    order = sorted(range(len(values)), key=lambda i: -values[i])
    ranks = [0.0] * len(values)
    pos = 0
    while pos < len(order):
        end = pos
        while end + 1 < len(order) and values[order[end + 1]] == values[order[pos]]:
            end += 1
        mean_rank = (pos + end) / 2.0 + 1.0
        for k in range(pos, end + 1):
            ranks[order[k]] = mean_rank
        pos = end + 1
    return ranks


SuccessTable = Mapping[str, Mapping[str, Mapping[int, Sequence[bool]]]]


def compute_metrics(results: SuccessTable) -> MetricsReport:
    """Aggregate per-model success tables.

    `results` maps model -> task -> seed -> list of per-trial successes
    (booleans, or success rates when replaying published numbers). Every
    model must cover the same (task, seed) grid with the same trial counts.
    Per task, a seed contributes its trial mean; the reported value is the
    mean and std (over seeds) of those rates. Ranks are fractional per task.
    """
    if not results:
        raise ValueError("no results to aggregate")
    models = sorted(results)
    grid = {m: sorted((t, s, len(results[m][t][s]))
                      for t in results[m] for s in results[m][t])
            for m in models}
    reference = grid[models[0]]
    for m in models[1:]:
        if grid[m] != reference:
            raise GridMismatch(
                f"model {m!r} grid differs from {models[0]!r}")
    if not reference:
        raise GridMismatch("empty evaluation grid")

    tasks = sorted({t for t, _, _ in reference})
    per_task: dict[str, dict[str, tuple[float, float]]] = {m: {} for m in models}
    for m in models:
        for t in tasks:
            rates = [float(np.mean(np.asarray(trials, dtype=np.float64)))
                     for _, trials in sorted(results[m][t].items())]
            per_task[m][t] = (float(np.mean(rates)), float(np.std(rates)))

    average_success = {m: float(np.mean([per_task[m][t][0] for t in tasks]))
                       for m in models}
    rank_sums = {m: 0.0 for m in models}
    for t in tasks:
        ranks = fractional_ranks([per_task[m][t][0] for m in models])
        for m, r in zip(models, ranks):
            rank_sums[m] += r
    average_rank = {m: rank_sums[m] / len(tasks) for m in models}
    return MetricsReport(per_task, average_success, average_rank, tuple(tasks))


def results_to_table(rows: Sequence[dict]) -> SuccessTable:
    """Group flat CSV rows into the nested model/task/seed table."""
    table: dict[str, dict[str, dict[int, list[bool]]]] = {}
    ordered = sorted(rows, key=lambda r: (r["model"], r["task"], r["seed"], r["trial"]))
    for row in ordered:
        table.setdefault(row["model"], {}).setdefault(row["task"], {}) \
             .setdefault(row["seed"], []).append(row["success"])
    return table
