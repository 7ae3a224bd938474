"""Acceptance suite: one test per release criterion.

Each test measures its clauses, records a verdict line (printed by the
conftest terminal summary), and asserts the criterion as stated.  Expensive
artifacts (the standard 100-target scene, its tracking runs, the solver
benchmark grid) are computed once and shared; every criterion's runtime
clause is checked against the wall time of the work it depends on, whether
or not this test was the one that computed it.
"""

import itertools
import math
import time

import numpy as np

from crowdtrack import (
    SolverConfig,
    TrackerConfig,
    accuracy_curve,
    bench_solvers,
    brute_force_solve,
    build_group_mst,
    coherent_groups,
    fw_solve,
    generate_scene,
    gradient,
    identity_swaps,
    make_palette,
    objective,
    render_frame,
    round_solution,
    standard_scene_config,
    synthetic_frame_problem,
    track_sequence,
)
from crowdtrack.qp import BlockLayout
from crowdtrack.scene import GroundTruth, SceneConfig

from test_qp import random_feasible, random_problem

RESULTS: list[tuple[int, str, bool, str]] = []


def record(number: int, name: str, passed: bool, detail: str) -> None:
    RESULTS.append((number, name, bool(passed), detail))
    assert passed, f"criterion {number} ({name}): {detail}"


_cache: dict = {}


def _standard_scene():
    if "scene" not in _cache:
        frames, gt = generate_scene(standard_scene_config())
        _cache["scene"] = (frames, gt)
    return _cache["scene"]


_ARMS = {
    "full": lambda: TrackerConfig(),
    "b_mo": lambda: TrackerConfig(use_neighbor_motion=False, use_group=False),
    "b": lambda: TrackerConfig(use_motion=False, use_neighbor_motion=False,
                               use_group=False),
    "dense": lambda: TrackerConfig(prune=None),
}


def _tracked(arm: str):
    """(tracks, summaries, wall seconds) for one tracker arm, cached."""
    key = f"run_{arm}"
    if key not in _cache:
        frames, gt = _standard_scene()
        t0 = time.perf_counter()
        tracks, summaries = track_sequence(frames, gt, _ARMS[arm]())
        _cache[key] = (tracks, summaries, time.perf_counter() - t0)
    return _cache[key]


BENCH_SIZES = (25, 50, 100)
BENCH_EPSILON = 1e-4
# weakly coupled instances: at this epsilon the active-set variants
# converge at every size within the cap while plain FW never does
BENCH_INSTANCE = dict(score_noise=0.1, spacing_factor=2.6, include_group=False)


def _bench():
    """(rows with traces, build wall seconds) for the benchmark grid."""
    if "bench" not in _cache:
        t0 = time.perf_counter()
        rows = bench_solvers(BENCH_SIZES, seeds=30, epsilon=BENCH_EPSILON,
                             candidates_per_target=8, max_iterations=8000,
                             instance_params=BENCH_INSTANCE, keep_traces=True)
        _cache["bench"] = (rows, time.perf_counter() - t0)
    return _cache["bench"]


def test_criterion_01_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    h = 1e-6
    worst = 0.0
    for _ in range(50):
        problem = random_problem(rng, max_blocks=10, max_size=8)
        x = random_feasible(rng, problem.layout)
        analytic = gradient(problem, x)
        fd = np.empty_like(analytic)
        for i in range(len(x)):
            step = np.zeros_like(x)
            step[i] = h
            fd[i] = (objective(problem, x + step)
                     - objective(problem, x - step)) / (2 * h)
        rel = np.linalg.norm(fd - analytic) / max(np.linalg.norm(fd), 1e-30)
        worst = max(worst, rel)
    wall = time.perf_counter() - t0
    record(1, "analytic gradient vs central differences",
           worst <= 1e-6 and wall < 5.0,
           f"max rel err {worst:.2e} over 50 instances, {wall:.1f}s")


def test_criterion_02_small_instances_match_enumeration():
    # tracking-shaped instances from the shipped generator: geometric
    # proximity and chain-formation couplings, 2..5 targets, 2..4 candidates
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    cfg = SolverConfig(variant="fw_swap", epsilon=1e-9, max_iterations=5000)
    bound_ok = 0
    rounded_ok = 0
    n = 200
    for _ in range(n):
        problem = synthetic_frame_problem(
            int(rng.integers(2, 6)), int(rng.integers(2, 5)), rng)
        result = fw_solve(problem, cfg)
        best, best_val = brute_force_solve(problem)
        frac_val = objective(problem, result.fractional)
        bound_ok += frac_val <= best_val + 1e-8
        rounded_ok += result.rounded == best
    wall = time.perf_counter() - t0
    record(2, "fractional bound and rounding vs brute force",
           bound_ok == n and rounded_ok >= 0.9 * n and wall < 30.0,
           f"bound {bound_ok}/{n}, rounded optimal {rounded_ok}/{n}, "
           f"{wall:.1f}s")


def test_criterion_03_descent_and_certificates():
    rows, _ = _bench()
    worst_rise = -np.inf
    certified = True
    for row in rows:
        obj = np.asarray(row["trace"].objective)
        if len(obj) > 1:
            worst_rise = max(worst_rise, float(np.diff(obj).max()))
        if row["converged"]:
            certified &= row["trace"].gap[-1] <= BENCH_EPSILON
    record(3, "monotone descent and terminal certificates",
           worst_rise <= 1e-10 and certified,
           f"{len(rows)} solves, worst objective rise {worst_rise:.2e}, "
           f"certificates {'all hold' if certified else 'violated'}")


def test_criterion_04_variant_iteration_ordering():
    rows, build_wall = _bench()
    means = {}
    for size, variant in itertools.product(BENCH_SIZES,
                                           ("fw", "fw_away", "fw_swap")):
        its = [r["iterations"] for r in rows
               if r["size"] == size and r["variant"] == variant]
        assert len(its) == 30
        means[size, variant] = float(np.mean(its))
    ordered = all(
        means[s, "fw_swap"] <= means[s, "fw_away"] <= means[s, "fw"]
        for s in BENCH_SIZES
    )
    detail = "; ".join(
        f"size {s}: swap {means[s, 'fw_swap']:.0f} <= "
        f"away {means[s, 'fw_away']:.0f} <= fw {means[s, 'fw']:.0f}"
        for s in BENCH_SIZES
    )
    record(4, "mean iterations ordering across variants",
           ordered and build_wall < 300.0,
           f"{detail}; grid built in {build_wall:.0f}s")


def test_criterion_05_large_frame_solve_speed():
    rng = np.random.default_rng(10_000 * 200)
    problem = synthetic_frame_problem(200, 30, rng)
    l = problem.layout.n_variables
    density = problem.combined_quadratic.nnz / (l * l)
    t0 = time.perf_counter()
    result = fw_solve(problem, SolverConfig(variant="fw_swap", epsilon=0.01,
                                            max_iterations=5000))
    wall = time.perf_counter() - t0
    record(5, "6000-variable frame solved under two seconds",
           l == 6000 and density < 0.05 and result.converged and wall <= 2.0,
           f"l={l}, Q density {density:.3f}, converged={result.converged}, "
           f"{wall:.2f}s")


def test_criterion_06_ablation_accuracy_ordering():
    _, gt = _standard_scene()
    acc = {}
    walls = 0.0
    for arm in ("full", "b_mo", "b"):
        tracks, _, wall = _tracked(arm)
        acc[arm] = accuracy_curve(tracks, gt, 15).at(15)
        walls += wall
    ordered = acc["full"] >= acc["b_mo"] >= acc["b"]
    gap_pts = 100.0 * (acc["full"] - acc["b"])
    record(6, "accuracy ordering across term ablations",
           ordered and gap_pts >= 3.0 and walls < 600.0,
           f"full {acc['full']:.4f} >= motion-only {acc['b_mo']:.4f} >= "
           f"appearance-only {acc['b']:.4f}; spread {gap_pts:.1f} pts; "
           f"{walls:.0f}s")


def _fading_twin_scene(n_frames=40, sep=5.75, speed=1.2, fade=0.6,
                       fade_frames=range(13, 25), frame_size=(112, 64)):
    """Two same-hue disks travel side by side; the lower one dims briefly.

    While dimmed, the lower target's own response drops below its twin's,
    so a tracker with no repulsion between targets parks both estimates on
    the bright disk and never recovers after the dim phase ends.
    """
    cfg = SceneConfig(n_targets=2, n_frames=n_frames, frame_size=frame_size,
                      target_radius=3.0, n_groups=1, palette_size=1,
                      noise_sigma=0.0, seed=0)
    base = make_palette(1)[0].astype(float)
    cy = frame_size[1] / 2.0
    frames = []
    rec = {"frame": [], "target_id": [], "x": [], "y": [], "group_id": []}
    for t in range(n_frames):
        x = 12.0 + speed * t
        dimmed = fade if (t + 1) in fade_frames else 1.0
        colors = np.stack([base, dimmed * base])
        positions = np.array([[x, cy - sep / 2.0], [x, cy + sep / 2.0]])
        raster = render_frame(positions, colors, cfg)
        frames.append(np.clip(np.round(raster), 0, 255).astype(np.uint8))
        rec["frame"].extend([t + 1] * 2)
        rec["target_id"].extend([0, 1])
        rec["x"].extend(positions[:, 0])
        rec["y"].extend(positions[:, 1])
        rec["group_id"].extend([0, 0])
    return frames, GroundTruth(**{k: np.array(v) for k, v in rec.items()})


def test_criterion_07_proximity_prevents_capture():
    t0 = time.perf_counter()
    frames, gt = _fading_twin_scene()
    # both arms drop the group terms so the comparison isolates the
    # proximity penalty; a co-moving pair would otherwise be held apart
    # by the formation term alone
    base_kw = dict(use_neighbor_motion=False, use_group=False)
    with_prox, _ = track_sequence(frames, gt, TrackerConfig(**base_kw))
    without, _ = track_sequence(
        frames, gt, TrackerConfig(use_proximity=False, **base_kw))
    swaps_with = identity_swaps(with_prox, gt)
    swaps_without = identity_swaps(without, gt)
    wall = time.perf_counter() - t0
    record(7, "proximity term prevents identity capture",
           swaps_with == 0 and swaps_with <= swaps_without and wall < 30.0,
           f"with {swaps_with} swaps, without {swaps_without}, {wall:.1f}s")


def test_criterion_08_pruning_speedup():
    _, gt = _standard_scene()
    tracks_p, summaries_p, wall_p = _tracked("full")
    tracks_d, summaries_d, wall_d = _tracked("dense")
    vars_p = sum(s.n_variables for s in summaries_p)
    vars_d = sum(s.n_variables for s in summaries_d)
    var_ratio = vars_d / vars_p
    acc_p = accuracy_curve(tracks_p, gt, 15).at(15)
    acc_d = accuracy_curve(tracks_d, gt, 15).at(15)
    delta_pts = 100.0 * abs(acc_p - acc_d)
    speedup = (wall_d / len(summaries_d)) / (wall_p / len(summaries_p))
    record(8, "candidate pruning cuts size and cost, keeps accuracy",
           var_ratio >= 5.0 and delta_pts <= 1.0 and speedup >= 3.0
           and wall_p + wall_d < 900.0,
           f"variables {var_ratio:.2f}x, accuracy delta {delta_pts:.2f} pts "
           f"(pruned {acc_p:.4f} vs dense {acc_d:.4f}), "
           f"per-frame speedup {speedup:.2f}x, {wall_p + wall_d:.0f}s")


def test_criterion_09_rounding_is_nearest_vertex():
    rng = np.random.default_rng(23)
    t0 = time.perf_counter()
    n = 500
    all_nearest = True
    for _ in range(n):
        layout = BlockLayout(rng.integers(1, 5, size=rng.integers(1, 5)))
        x = random_feasible(rng, layout)
        rounded = round_solution(layout, x)
        rounded_dist = float(np.sum((x - rounded.as_vector(layout)) ** 2))
        best = min(
            float(np.sum((x - _vertex(layout, combo)) ** 2))
            for combo in itertools.product(
                *[range(int(k)) for k in layout.block_sizes])
        )
        all_nearest &= rounded_dist <= best + 1e-12
    wall = time.perf_counter() - t0
    record(9, "rounding returns the nearest assignment",
           all_nearest and wall < 10.0,
           f"{n}/{n} nearest by enumeration, {wall:.1f}s")


def _vertex(layout, combo):
    v = np.zeros(layout.n_variables)
    v[layout.globals_of(np.asarray(combo))] = 1.0
    return v


def _rand_index(a, b) -> float:
    n = len(a)
    agree = 0
    for i in range(n):
        for j in range(i + 1, n):
            agree += (a[i] == a[j]) == (b[i] == b[j])
    return agree / (n * (n - 1) / 2)


def _prufer_edges(seq, m):
    """Decode a Prufer sequence into the edge list of its labeled tree."""
    degree = [1] * m
    for v in seq:
        degree[v] += 1
    edges = []
    for v in seq:
        for u in range(m):
            if degree[u] == 1:
                edges.append((u, v))
                degree[u] -= 1
                degree[v] -= 1
                break
    tail = [u for u in range(m) if degree[u] == 1]
    edges.append((tail[0], tail[1]))
    return edges


def test_criterion_10_group_recovery_and_mst():
    t0 = time.perf_counter()
    recovered = 0
    n_seeds = 20
    for seed in range(n_seeds):
        rng = np.random.default_rng(400 + seed)
        n_groups = int(rng.integers(2, 6))
        sizes = rng.integers(1, 7, size=n_groups)
        centers = rng.permutation(n_groups * 4)[:n_groups]
        centers = np.column_stack([
            (centers % 4) * 90.0 + 60.0, (centers // 4) * 90.0 + 60.0
        ])
        planted, histories = [], []
        for g in range(n_groups):
            angle = 2 * math.pi * g / n_groups + rng.uniform(-0.1, 0.1)
            vel = rng.uniform(1.5, 2.5) * np.array(
                [math.cos(angle), math.sin(angle)])
            for _ in range(int(sizes[g])):
                start = centers[g] + rng.uniform(-8, 8, size=2)
                histories.append([start + t * vel for t in range(12)])
                planted.append(g)
        labels = coherent_groups(histories, window=10, target_size=6.0)
        recovered += _rand_index(planted, labels) == 1.0

    mst_exact = True
    for m in range(2, 9):
        rng = np.random.default_rng(900 + m)
        points = rng.uniform(0, 50, size=(m, 2))
        total = sum(w for _, _, w in build_group_mst(points))
        pair_w = {
            (i, j): float(np.linalg.norm(points[i] - points[j]))
            for i in range(m) for j in range(i + 1, m)
        }
        if m == 2:
            best = pair_w[0, 1]
        else:
            best = min(
                sum(pair_w[min(e), max(e)] for e in _prufer_edges(seq, m))
                for seq in itertools.product(range(m), repeat=m - 2)
            )
        mst_exact &= abs(total - best) <= 1e-9
    wall = time.perf_counter() - t0
    record(10, "group recovery and spanning-tree optimality",
           recovered == n_seeds and mst_exact and wall < 30.0,
           f"partitions {recovered}/{n_seeds}, trees exact for 2..8 members, "
           f"{wall:.1f}s")
