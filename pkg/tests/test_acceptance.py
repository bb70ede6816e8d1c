"""End-to-end acceptance checks, one test per criterion.

Each test prints a summary line; the heavy end-to-end grids share
module-scoped fixtures so the whole module stays within its time budget.
"""

import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oneshot_manip import vlm
from oneshot_manip.cloud import DescriptorSet
from oneshot_manip.config import BenchmarkConfig
from oneshot_manip.invariant import StatePair, gt_invariant_region
from oneshot_manip.matcher import dual_softmax
from oneshot_manip.planner import (Box, PlanConfig, PlanningTimeout, WorldModel,
                                   plan_rrt_connect)
from oneshot_manip.planner import _edge_free
from oneshot_manip.se3 import (Pose, WeightedPointSet, geodesic_angle,
                               quat_from_rotation, solve_weighted_procrustes)
from oneshot_manip.segmenter import (InteractionPhase, PhaseKind,
                                     sample_macro_steps, segment_rule_based)
from oneshot_manip.simbench import (annotate_demo, compute_metrics,
                                    execute_rollout, generate_task,
                                    scripted_expert)

from conftest import random_pose
from test_invariant import make_state
from test_vlm import GOLDEN_BODY, GOLDEN_RECORDS, GOLDEN_SPANS

LEVELS = (1, 2, 3)
SEEDS = (0, 1, 2, 3, 4)
TRIALS = 25


@pytest.fixture(scope="module")
def benchmark_cells():
    """(level, seed) -> (task, demo, annotation) with default config."""
    config = BenchmarkConfig()
    t0 = time.perf_counter()
    cells = {}
    for level in LEVELS:
        for seed in SEEDS:
            task = generate_task(level, seed,
                                 config.benchmark.cloud_density,
                                 config.benchmark.min_object_points,
                                 config.benchmark.tolerance_pos,
                                 config.benchmark.tolerance_rot)
            demo = scripted_expert(task)
            annotation = annotate_demo(task, demo, config)
            cells[(level, seed)] = (task, demo, annotation)
    build_time = time.perf_counter() - t0
    return config, cells, build_time


def run_mode_grid(config, cells, mode):
    per_level = {}
    per_cell = {}
    for (level, seed), (task, demo, annotation) in sorted(cells.items()):
        outcomes = [execute_rollout(task, demo, config, seed, trial,
                                    annotation=annotation, mode=mode).success
                    for trial in range(TRIALS)]
        per_level.setdefault(level, []).extend(outcomes)
        per_cell[(level, seed)] = outcomes
    return per_level, per_cell


def test_c01_procrustes_recovery_speed_and_accuracy(rng):
    worst_rot = 0.0
    worst_trans = 0.0
    cases = []
    for _ in range(1000):
        n = int(rng.integers(4, 32))
        pts = rng.uniform(-0.5, 0.5, (n, 3))
        true = random_pose(rng)
        cases.append((WeightedPointSet.uniform(pts),
                      WeightedPointSet.uniform(true.apply(pts)), true))
    t0 = time.perf_counter()
    solved = [solve_weighted_procrustes(src, dst) for src, dst, _ in cases]
    elapsed = time.perf_counter() - t0
    for got, (_, _, true) in zip(solved, cases):
        worst_rot = max(worst_rot, geodesic_angle(got.rotation, true.rotation))
        worst_trans = max(worst_trans,
                          float(np.abs(got.translation - true.translation).max()))
    print(f"\ncriterion 1: 1000 solves in {elapsed:.3f}s, "
          f"rot err {worst_rot:.2e} rad, trans err {worst_trans:.2e} m")
    assert worst_rot < 1e-6
    assert worst_trans < 1e-9
    assert elapsed < 1.0


def test_c02_dual_softmax_invariants(rng):
    for _ in range(1000):
        n, m, d = (int(rng.integers(1, 65)), int(rng.integers(1, 65)),
                   int(rng.integers(1, 10)))
        hr = rng.normal(size=(n, d))
        hs = rng.normal(size=(m, d))
        temp = float(rng.uniform(0.2, 3.0))
        soft = dual_softmax(DescriptorSet(hr), DescriptorSet(hs), temp)
        logits = hr @ hs.T / temp
        row = np.exp(logits - logits.max(axis=1, keepdims=True))
        row /= row.sum(axis=1, keepdims=True)
        col = np.exp(logits - logits.max(axis=0, keepdims=True))
        col /= col.sum(axis=0, keepdims=True)
        assert soft.min() > 0.0 and soft.max() <= 1.0 + 1e-12
        assert np.abs(row.sum(axis=1) - 1.0).max() <= 1e-9
        assert np.all(soft <= row + 1e-12)
        assert np.all(soft <= col + 1e-12)

    h = DescriptorSet(np.eye(2) * math.sqrt(10.0))
    diag = dual_softmax(h, h, 1.0)[0, 0]
    uniform = dual_softmax(DescriptorSet(np.ones((2, 3))),
                           DescriptorSet(np.ones((2, 3))), 1.0)
    print(f"\ncriterion 2: diagonal {diag:.6f} (expected 0.999909), "
          f"uniform {uniform[0, 0]:.6f} (expected 0.25)")
    assert abs(diag - 0.999909) < 1e-5
    assert np.abs(uniform - 0.25).max() < 1e-5


def test_c03_segmenter_exactness_on_expert_demos():
    checked = 0
    for level, expected_phases in ((1, 6), (2, 9), (3, 12)):
        for seed in range(100):
            task = generate_task(level, seed)
            demo = scripted_expert(task)
            got = segment_rule_based(demo.frames())
            assert len(got.phases) == expected_phases, (level, seed)
            assert [(p.kind, p.start, p.end) for p in got.phases] == \
                   [(p.kind, p.start, p.end) for p in demo.true_phases.phases], \
                   (level, seed)
            checked += 1
    print(f"\ncriterion 3: {checked} demos segmented exactly "
          f"(100 per level, counts 6/9/12)")
    assert checked == 300


def test_c04_reference_reply_and_mutations():
    d = vlm.parse_response(GOLDEN_BODY, 61)
    assert [(p.kind, p.start, p.end) for p in d.phases] == GOLDEN_SPANS

    overlap = [dict(r) for r in GOLDEN_RECORDS]
    overlap[1]["start"] = 13
    with pytest.raises(vlm.Overlap):
        vlm.parse_response(json.dumps(overlap), 61)

    gap = [dict(r) for r in GOLDEN_RECORDS]
    gap[3]["start"] = 43
    with pytest.raises(vlm.Gap):
        vlm.parse_response(json.dumps(gap), 61)

    cycle = [dict(r) for r in GOLDEN_RECORDS]
    cycle[1]["stage"], cycle[2]["stage"] = cycle[2]["stage"], cycle[1]["stage"]
    with pytest.raises(vlm.CycleOrder):
        vlm.parse_response(json.dumps(cycle), 61)
    print("\ncriterion 4: reference reply parses to the exact 6 ranges; "
          "overlap/gap/cycle mutations raise their designated errors")


@given(st.integers(0, 200), st.integers(0, 80), st.integers(1, 12))
@settings(max_examples=300, deadline=None)
def test_c05_macro_step_rule_property(start, length, stride):
    phase = InteractionPhase(PhaseKind.PRE_CONTACT, start, start + length)
    steps = sample_macro_steps(phase, stride)
    assert steps[0] == phase.start
    assert steps[-1] == phase.end
    assert all(0 < b - a <= stride for a, b in zip(steps, steps[1:]))


def test_c05_macro_step_reference_case():
    steps = sample_macro_steps(InteractionPhase(PhaseKind.PRE_CONTACT, 0, 14), 5)
    print(f"\ncriterion 5: [0,14] stride 5 -> {steps}")
    assert steps == [0, 5, 10, 14]


def brute_force_region_choice(state_a, state_b, pose_a, pose_b):
    """Exhaustive plain-loop argmin over segments, classes and points."""
    inv_a, inv_b = pose_a.inverse(), pose_b.inverse()
    best = (float("inf"), None)
    for instance in sorted(set(state_a.cloud.instance_id.tolist())):
        idx = [i for i in range(len(state_a.cloud))
               if state_a.cloud.instance_id[i] == instance]
        seg_class = int(state_a.cloud.class_id[idx[0]])
        others = [j for j in range(len(state_b.cloud))
                  if state_b.cloud.class_id[j] == seg_class]
        if not others:
            continue
        total = 0.0
        for i in idx:
            p = inv_a.apply(state_a.cloud.points[i])
            total += min(float(np.linalg.norm(p - inv_b.apply(state_b.cloud.points[j])))
                         for j in others)
        cost = total / len(idx)
        if cost < best[0]:
            best = (cost, instance)
    return best[1]


def test_c06_invariant_region_matches_exhaustive_brute_force(rng):
    agreements = 0
    for _ in range(200):
        m = int(rng.integers(8, 16))
        seg_a = rng.uniform(0.0, 0.15, (m, 3))
        seg_b = rng.uniform(0.3, 0.45, (m, 3))
        inst = [1] * m + [2] * m
        cls = [10] * m + [20] * m
        state_a = make_state(np.vstack([seg_a, seg_b]), inst, cls)
        pose_a = random_pose(rng, 0.3)
        motion_1 = random_pose(rng, 0.2)
        motion_2 = random_pose(rng, 0.2)
        follower = int(rng.integers(1, 3))
        state_b = make_state(np.vstack([motion_1.apply(seg_a),
                                        motion_2.apply(seg_b)]), inst, cls)
        pose_b = (motion_1 if follower == 1 else motion_2).compose(pose_a)
        pair = StatePair(state_a, state_b, pose_a, pose_b)
        region = gt_invariant_region([pair], PhaseKind.PRE_CONTACT)
        expected = brute_force_region_choice(state_a, state_b, pose_a, pose_b)
        assert region.segment_instance_id == expected == follower
        agreements += 1

    # Frame equivariance under 100 random rigid transforms of state_b.
    m = 12
    seg_a = rng.uniform(0.0, 0.15, (m, 3))
    seg_b = rng.uniform(0.3, 0.45, (m, 3))
    inst = [1] * m + [2] * m
    cls = [10] * m + [20] * m
    state_a = make_state(np.vstack([seg_a, seg_b]), inst, cls)
    pose_a = random_pose(rng, 0.3)
    motion = random_pose(rng, 0.2)
    state_b = make_state(np.vstack([motion.apply(seg_a), seg_b]), inst, cls)
    pose_b = motion.compose(pose_a)
    base = gt_invariant_region([StatePair(state_a, state_b, pose_a, pose_b)],
                               PhaseKind.PRE_CONTACT)
    for _ in range(100):
        g = random_pose(rng)
        moved = make_state(g.apply(state_b.cloud.points), inst, cls)
        region = gt_invariant_region(
            [StatePair(state_a, moved, pose_a, g.compose(pose_b))],
            PhaseKind.PRE_CONTACT)
        assert region.segment_instance_id == base.segment_instance_id
        assert np.array_equal(region.point_indices, base.point_indices)
    print(f"\ncriterion 6: {agreements}/200 brute-force agreements, "
          "equivariant under 100 rigid transforms")


def test_c07_end_to_end_oracle(benchmark_cells):
    config, cells, build_time = benchmark_cells
    t0 = time.perf_counter()
    per_level, _ = run_mode_grid(config, cells, "oracle")
    elapsed = time.perf_counter() - t0 + build_time

    means = {}
    for level in LEVELS:
        outcomes = per_level[level]
        assert len(outcomes) == len(SEEDS) * TRIALS
        means[level] = sum(outcomes) / len(outcomes)
    print(f"\ncriterion 7: oracle success per level "
          f"{ {lvl: f'{100 * means[lvl]:.1f}%' for lvl in LEVELS} } "
          f"in {elapsed:.0f}s (incl. demos + annotation)")
    assert means[1] >= 0.95
    assert means[2] >= 0.90
    assert means[3] >= 0.90
    assert means[1] >= means[2] >= means[3]
    assert elapsed < 600.0


def test_c08_descriptor_mode_beats_random_baseline(benchmark_cells):
    config, cells, _ = benchmark_cells
    desc_level, desc_cells = run_mode_grid(config, cells, "descriptor")
    rand_level, rand_cells = run_mode_grid(config, cells, "random")

    def table(cell_outcomes, label):
        results = {}
        for (level, seed), outcomes in cell_outcomes.items():
            results.setdefault(f"L{level}", {})[seed] = outcomes
        return {label: results}

    report = compute_metrics({**table(desc_cells, "descriptor"),
                              **table(rand_cells, "random")})
    print("\ncriterion 8: per-level success (mean ± std over seeds)")
    print(f"| {'task':6s} | {'descriptor':13s} | {'random':13s} |")
    for task in report.tasks:
        d_mu, d_sd = report.per_task["descriptor"][task]
        r_mu, r_sd = report.per_task["random"][task]
        print(f"| {task:6s} | {100*d_mu:5.1f} ± {100*d_sd:4.1f} "
              f"| {100*r_mu:5.1f} ± {100*r_sd:4.1f} |")
    print(f"| avg    | {100*report.average_success['descriptor']:5.1f}         "
          f"| {100*report.average_success['random']:5.1f}         |")

    for level in LEVELS:
        desc_rate = sum(desc_level[level]) / len(desc_level[level])
        rand_rate = sum(rand_level[level]) / len(rand_level[level])
        assert desc_rate > rand_rate, (level, desc_rate, rand_rate)


def test_c09_planner_on_random_feasible_worlds(rng):
    ws = Box(np.array([-0.5, -0.5, 0.0]), np.array([0.5, 0.5, 0.8]))
    he = np.array([0.04, 0.04, 0.06])
    cfg = PlanConfig(rng_seed=0)
    successes = 0
    for trial in range(100):
        gap_center = float(rng.uniform(-0.25, 0.25))
        gap_half = float(rng.uniform(0.5 * 4 * cfg.step_size, 0.22))
        lower = Box(np.array([-0.05, -0.5, 0.0]),
                    np.array([0.05, gap_center - gap_half, 0.8]))
        upper = Box(np.array([-0.05, gap_center + gap_half, 0.0]),
                    np.array([0.05, 0.5, 0.8]))
        world = WorldModel((lower, upper), ws, he)
        start = Pose.from_translation((float(rng.uniform(-0.38, -0.18)),
                                       float(rng.uniform(-0.3, 0.3)),
                                       float(rng.uniform(0.15, 0.6))))
        goal = Pose.from_translation((float(rng.uniform(0.18, 0.38)),
                                      float(rng.uniform(-0.3, 0.3)),
                                      float(rng.uniform(0.15, 0.6))))
        try:
            path = plan_rrt_connect(world, start, goal,
                                    PlanConfig(rng_seed=trial))
        except PlanningTimeout:
            continue
        for a, b in zip(path, path[1:]):
            assert _edge_free(world, a.translation, quat_from_rotation(a.rotation),
                              b.translation, quat_from_rotation(b.rotation),
                              cfg.step_size / 8.0, cfg.rotation_weight)
        successes += 1
    print(f"\ncriterion 9: {successes}/100 feasible worlds solved, "
          "all paths collision-free at twice the checking density")
    assert successes >= 99


# Success rates (%) reported for five systems over the same 20-task suite,
# used as a fixed reference input for the rank computation.
REFERENCE_TASKS = (
    "empty-container", "empty-dishwasher", "tray-off-oven", "tray-in-oven",
    "bottle-in-fridge", "place-2-cups", "remove-2-cups", "straighten-rope",
    "slide-and-place", "put-item", "take-item", "stack-cups",
    "stack-cups-blocks", "put-3-books", "put-shoes", "take-shoes",
    "setup-chess", "set-table", "stack-blocks", "block-pyramid")

REFERENCE_SUCCESS = {
    "baseline-a": (1.6, 0.0, 0.0, 1.2, 4.0, 1.3, 2.7, 2.7, 2.7,
                28.0, 29.3, 2.7, 0.0, 2.7, 0.0, 0.0, 0.0, 1.3, 0.0, 0.0),
    "baseline-b": (1.6, 1.3, 1.6, 1.2, 4.3, 1.3, 5.3, 5.3, 0.0,
                29.3, 30.7, 0.0, 0.0, 0.0, 1.3, 4.0, 1.3, 0.0, 0.0, 0.0),
    "baseline-c": (1.3, 2.7, 5.3, 0.0, 2.7, 0.0, 4.0, 4.0, 5.3,
               18.7, 37.3, 8.0, 0.0, 0.0, 2.7, 0.0, 1.3, 0.0, 0.0, 0.0),
    "baseline-d": (4.0, 1.3, 2.7, 5.3, 1.3, 2.7, 4.0, 4.0, 5.3,
             40.0, 38.7, 4.0, 1.3, 9.3, 1.3, 1.3, 1.3, 2.7, 1.3, 1.3),
    "ours": (28.0, 42.7, 37.3, 48.0, 18.7, 14.7, 24.0, 30.7, 26.7,
             65.3, 76.0, 28.0, 18.7, 42.7, 29.3, 12.0, 9.3, 17.3, 8.0, 8.0),
}

REFERENCE_AVG_RANK = {"baseline-a": 3.7, "baseline-b": 3.3, "baseline-c": 3.3,
                      "baseline-d": 2.6, "ours": 1.0}


def reference_report():
    table = {model: {task: {seed: [value / 100.0] for seed in range(5)}
                     for task, value in zip(REFERENCE_TASKS, values)}
             for model, values in REFERENCE_SUCCESS.items()}
    return compute_metrics(table)


def test_c10_reference_table_top_rank():
    report = reference_report()
    print(f"\ncriterion 10a: computed average ranks "
          f"{ {m: round(r, 3) for m, r in sorted(report.average_rank.items())} }")
    assert report.average_rank["ours"] == 1.0


def test_c10_reference_table_baseline_ranks_within_tolerance():
    # Known-red check: the reference table's published average ranks are not
    # reproducible from its own per-task numbers under fractional ranking (or
    # any standard tie convention); the aggregates appear to come from a
    # different computation. Kept faithful rather than loosened.
    report = reference_report()
    diffs = {m: abs(report.average_rank[m] - REFERENCE_AVG_RANK[m])
             for m in REFERENCE_AVG_RANK}
    print(f"\ncriterion 10b: rank deviations from the reference aggregates "
          f"{ {m: round(d, 3) for m, d in sorted(diffs.items())} }")
    assert all(d <= 0.1 for d in diffs.values()), diffs
