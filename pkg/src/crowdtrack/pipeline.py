"""Online tracking loop and evaluation utilities.

Each frame becomes one joint assignment problem: per-target candidate
locations score against appearance, motion, and neighborhood-motion terms,
while sparse pairwise matrices keep distinct targets apart and hold group
formations together.  The solver's rounded block choices become the new
positions, then velocities, group structure, and appearance models are
refreshed for the next frame.

Also here: pixel-threshold accuracy curves, identity-swap counting against
ground truth, and the solver benchmark harness.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .appearance import (
    TrainingSet,
    fit_template,
    score_candidates,
    train_regressor,
    update_model,
)
from .instances import synthetic_frame_problem
from .motion import (
    MotionModel,
    TargetState,
    build_group_model,
    build_neighbor_sets,
    coherent_groups,
    group_similarity,
    motion_cost,
    neighborhood_motion_cost,
    proximity_similarity,
)
from .qp import (
    Assignment,
    BlockLayout,
    LinearCosts,
    build_problem,
    laplacianize,
    normalize_scores,
    objective,
)
from .sampling import PruneConfig, SearchRegion, dense_candidates, prune_candidates
from .scene import GroundTruth
from .solver import SolverConfig, SolverTrace, fw_solve

__all__ = [
    "TrackerConfig",
    "TrackSet",
    "AccuracyCurve",
    "FrameSummary",
    "track_sequence",
    "accuracy_curve",
    "identity_swaps",
    "bench_solvers",
    "write_bench_csv",
    "read_bench_csv",
    "BENCH_COLUMNS",
]


@dataclass(frozen=True)
class TrackerConfig:
    """Weights, term switches, and solver settings for the tracking loop."""

    target_size: float = 6.0
    motion_weight: float = 0.3
    neighbor_weight: float = 0.2
    use_motion: bool = True
    use_neighbor_motion: bool = True
    use_proximity: bool = True
    use_group: bool = True
    appearance: str = "ridge"
    solver: SolverConfig = field(default_factory=SolverConfig)
    prune: PruneConfig | None = field(default_factory=PruneConfig)
    group_refresh: int = 10
    search_half_extent: float | None = None
    patch_size: tuple[int, int] | None = None
    ridge: float = 0.1
    learning_rate: float = 0.05
    occlusion_threshold: float = 0.4
    velocity_window: int = 5

    def __post_init__(self) -> None:
        if self.target_size <= 0:
            raise ValueError(f"target size must be positive, got {self.target_size}")
        if self.motion_weight < 0 or self.neighbor_weight < 0:
            raise ValueError("term weights must be non-negative")
        if self.appearance not in ("ridge", "ncc"):
            raise ValueError(
                f"appearance backend must be 'ridge' or 'ncc', got "
                f"{self.appearance!r}"
            )
        if self.group_refresh < 1:
            raise ValueError("group refresh period must be >= 1")
        if not 0 <= self.occlusion_threshold <= 1:
            raise ValueError("occlusion threshold must lie in [0, 1]")
        if self.velocity_window < 2:
            raise ValueError("velocity window must be >= 2")

    @property
    def sigma(self) -> float:
        """Kernel width for proximity and formation terms: half target size."""
        return self.target_size / 2.0

    @property
    def half_extent(self) -> float:
        """Search window half width: the region spans twice the target size."""
        if self.search_half_extent is not None:
            return self.search_half_extent
        return self.target_size

    @property
    def patch(self) -> tuple[int, int]:
        if self.patch_size is not None:
            return self.patch_size
        side = max(3, int(round(self.target_size)))
        return (side, side)


@dataclass
class TrackSet:
    """Estimated positions per (frame, target); frames are 1-based.

    ``coasted`` marks frames where the solver failed to converge and the
    position fell back to the motion prediction.
    """

    frame: np.ndarray
    target_id: np.ndarray
    x: np.ndarray
    y: np.ndarray
    coasted: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = len(self.frame)
        if self.coasted is None:
            self.coasted = np.zeros(n, dtype=bool)
        for name in ("target_id", "x", "y", "coasted"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"track column {name} has wrong length")

    def positions_at(self, frame: int) -> np.ndarray:
        mask = self.frame == frame
        order = np.argsort(self.target_id[mask], kind="stable")
        return np.column_stack([self.x[mask][order], self.y[mask][order]])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "target_id", "x", "y"])
            for f, t, x, y in zip(self.frame, self.target_id, self.x, self.y):
                writer.writerow([int(f), int(t), f"{x:.2f}", f"{y:.2f}"])

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrackSet":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["frame", "target_id", "x", "y"]:
                raise ValueError(f"unexpected track header {header}")
            rows = list(reader)
        if not rows:
            raise ValueError(f"{path} contains no track rows")
        cols = list(zip(*rows))
        return cls(
            frame=np.array([int(v) for v in cols[0]]),
            target_id=np.array([int(v) for v in cols[1]]),
            x=np.array([float(v) for v in cols[2]]),
            y=np.array([float(v) for v in cols[3]]),
        )


@dataclass(frozen=True)
class AccuracyCurve:
    """Fraction of (frame, target) pairs within each pixel threshold."""

    thresholds: np.ndarray
    accuracy: np.ndarray

    def at(self, threshold: int) -> float:
        idx = np.searchsorted(self.thresholds, threshold)
        if idx >= len(self.thresholds) or self.thresholds[idx] != threshold:
            raise ValueError(f"threshold {threshold} not in curve")
        return float(self.accuracy[idx])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "accuracy"])
            for t, a in zip(self.thresholds, self.accuracy):
                writer.writerow([int(t), repr(float(a))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "AccuracyCurve":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["threshold", "accuracy"]:
                raise ValueError(f"unexpected curve header {header}")
            rows = list(reader)
        return cls(
            thresholds=np.array([int(r[0]) for r in rows]),
            accuracy=np.array([float(r[1]) for r in rows]),
        )


@dataclass(frozen=True)
class FrameSummary:
    """Solver outcome for one frame."""

    frame: int
    n_variables: int
    converged: bool
    objective: float
    trace: SolverTrace


def _fit_velocity(history: list, window: int) -> np.ndarray:
    """Least-squares slope of the trailing positions, pixels per frame."""
    pts = np.asarray(history[-window:], dtype=float)
    k = len(pts)
    if k < 2:
        return np.zeros(2)
    t = np.arange(k) - (k - 1) / 2.0
    denom = (t**2).sum()
    return (t @ (pts - pts.mean(axis=0))) / denom


def _train_appearance(frame: np.ndarray, position, cfg: TrackerConfig):
    if cfg.appearance == "ridge":
        training = TrainingSet.from_frame(frame, tuple(position), cfg.patch)
        return train_regressor(training, ridge=cfg.ridge,
                               learning_rate=cfg.learning_rate)
    return fit_template(frame, tuple(position), cfg.patch,
                        learning_rate=cfg.learning_rate)


def _candidate_sets(frame: np.ndarray, states: list[TargetState],
                    neighbor_sets, motion_model: MotionModel,
                    cfg: TrackerConfig) -> list[np.ndarray]:
    """Dense or pruned candidate positions for every target."""
    height, width = frame.shape[:2]
    out = []
    for i, state in enumerate(states):
        predicted = state.position + state.velocity
        region = SearchRegion(center=tuple(predicted),
                              half_extent=cfg.half_extent)
        dense = dense_candidates(region, frame_size=(width, height))
        if cfg.prune is None:
            out.append(dense.astype(float))
            continue
        block = BlockLayout([len(dense)])
        combined = normalize_scores(
            block, score_candidates(state.model, frame, dense)
        )
        if cfg.use_motion:
            combined = combined + cfg.motion_weight * normalize_scores(
                block, motion_cost(state, motion_model, dense)
            )
        if cfg.use_neighbor_motion and neighbor_sets is not None:
            combined = combined + cfg.neighbor_weight * normalize_scores(
                block,
                neighborhood_motion_cost(state, neighbor_sets[i], motion_model,
                                         dense),
            )
        pruned = prune_candidates(dense, combined, cfg.prune)
        pruned[:, 0] = np.clip(pruned[:, 0], 0, width - 1)
        pruned[:, 1] = np.clip(pruned[:, 1], 0, height - 1)
        unique = list(dict.fromkeys(map(tuple, pruned)))
        out.append(np.asarray(unique, dtype=float))
    return out


def build_frame_problem(frame: np.ndarray, states: list[TargetState],
                        neighbor_sets, group_model,
                        motion_model: MotionModel, cfg: TrackerConfig,
                        frame_index: int | None = None):
    """Assemble the joint assignment problem for one frame.

    Returns (problem, candidate_lists, normalized appearance scores).
    Disabled terms enter as zero vectors or are omitted from the quadratic
    list, which is equivalent to zero matrices.
    """
    candidate_lists = _candidate_sets(frame, states, neighbor_sets,
                                      motion_model, cfg)
    layout = BlockLayout([len(c) for c in candidate_lists])
    flat = np.concatenate(candidate_lists)
    block_ids = np.repeat(np.arange(len(states)), layout.block_sizes)

    appearance_raw = np.concatenate([
        score_candidates(state.model, frame, cands)
        for state, cands in zip(states, candidate_lists)
    ])
    appearance_norm = normalize_scores(layout, appearance_raw)
    costs_a = -appearance_norm

    if cfg.use_motion:
        motion_raw = np.concatenate([
            motion_cost(state, motion_model, cands)
            for state, cands in zip(states, candidate_lists)
        ])
        costs_m = -normalize_scores(layout, motion_raw)
    else:
        costs_m = np.zeros(layout.n_variables)

    if cfg.use_neighbor_motion and neighbor_sets is not None:
        neighbor_raw = np.concatenate([
            neighborhood_motion_cost(state, neighbor_sets[i], motion_model,
                                     candidate_lists[i])
            for i, state in enumerate(states)
        ])
        costs_nm = -normalize_scores(layout, neighbor_raw)
    else:
        costs_nm = np.zeros(layout.n_variables)

    quadratics = []
    if cfg.use_proximity:
        similarity = proximity_similarity(flat, block_ids, cfg.sigma)
        quadratics.append(laplacianize(similarity, mode="repel"))
    if cfg.use_group and group_model is not None and group_model.edges:
        similarity = group_similarity(candidate_lists, group_model, cfg.sigma,
                                      frame=frame_index)
        if similarity.nnz:
            quadratics.append(laplacianize(similarity, mode="attract"))

    linear = LinearCosts(
        appearance=costs_a, motion=costs_m, neighbor_motion=costs_nm,
        motion_weight=cfg.motion_weight, neighbor_weight=cfg.neighbor_weight,
    )
    problem = build_problem(layout, linear, quadratics)
    return problem, candidate_lists, appearance_norm


def track_sequence(frames: list[np.ndarray], init: GroundTruth,
                   cfg: TrackerConfig | None = None,
                   ) -> tuple[TrackSet, list[FrameSummary]]:
    """Track every initialized target through a frame sequence.

    Frame 1 output equals the initialization exactly.  From frame 2 on,
    each frame is assembled and solved jointly; if the solver fails to
    converge the frame's positions coast on motion prediction and the rows
    are flagged.  Group structure and membership refresh every
    ``cfg.group_refresh`` frames; appearance models blend in a freshly
    trained model each frame unless the chosen candidate looks occluded.
    """
    if cfg is None:
        cfg = TrackerConfig()
    if not frames:
        raise ValueError("frame list is empty")
    init_positions = init.positions_at(1)
    if len(init_positions) == 0:
        raise ValueError("initialization contains no frame-1 rows")
    mask = init.frame == 1
    order = np.argsort(init.target_id[mask], kind="stable")
    target_ids = init.target_id[mask][order]

    motion_model = MotionModel.for_target_size(cfg.target_size)
    states = []
    for tid, pos in zip(target_ids, init_positions):
        state = TargetState(
            target_id=int(tid),
            position=pos.astype(float).copy(),
            velocity=np.zeros(2),
            history=[pos.astype(float).copy()],
        )
        state.model = _train_appearance(frames[0], pos, cfg)
        states.append(state)

    n = len(states)
    rec_frame = [1] * n
    rec_tid = list(target_ids)
    rec_x = list(init_positions[:, 0])
    rec_y = list(init_positions[:, 1])
    rec_coast = [False] * n
    summaries: list[FrameSummary] = []

    labels = np.arange(n)
    group_model = None
    neighbor_sets = None

    for t in range(2, len(frames) + 1):
        frame = frames[t - 1]
        if group_model is None or t - group_model.built_frame >= cfg.group_refresh:
            labels = coherent_groups(
                [s.history for s in states], window=cfg.group_refresh,
                target_size=cfg.target_size,
            )
            positions = np.stack([s.position for s in states])
            group_model = build_group_model(
                positions, labels, frame=t, refresh_period=cfg.group_refresh,
            )
        neighbor_sets = build_neighbor_sets(states, labels, cfg.target_size)

        problem, candidate_lists, appearance_norm = build_frame_problem(
            frame, states, neighbor_sets, group_model, motion_model, cfg,
            frame_index=t,
        )
        # Start each solve at the best independent assignment rather than
        # the uniform point: exact decompositions of uniform over ragged
        # blocks contain atoms as small as 1/(k_a*k_b), which caps away and
        # swap steps to nothing on dense candidate grids.
        warm = Assignment(tuple(problem.layout.block_argmin(problem.combined_cost)))
        result = fw_solve(problem, cfg.solver,
                          x0=warm.as_vector(problem.layout))

        predicted = [s.position + s.velocity for s in states]
        if result.converged:
            chosen_positions = [
                candidate_lists[i][result.rounded.chosen[i]]
                for i in range(n)
            ]
            chosen_globals = problem.layout.globals_of(result.rounded.chosen)
        else:
            chosen_positions = predicted

        for i, state in enumerate(states):
            new_pos = np.asarray(chosen_positions[i], dtype=float)
            state.position = new_pos.copy()
            state.history.append(new_pos.copy())
            state.velocity = _fit_velocity(state.history, cfg.velocity_window)
            if result.converged:
                visible = (
                    appearance_norm[chosen_globals[i]] >= cfg.occlusion_threshold
                )
                if visible:
                    fresh = _train_appearance(frame, new_pos, cfg)
                    state.model = update_model(state.model, fresh,
                                               cfg.learning_rate)

        rec_frame.extend([t] * n)
        rec_tid.extend(target_ids)
        rec_x.extend(p[0] for p in chosen_positions)
        rec_y.extend(p[1] for p in chosen_positions)
        rec_coast.extend([not result.converged] * n)
        summaries.append(FrameSummary(
            frame=t,
            n_variables=problem.layout.n_variables,
            converged=result.converged,
            objective=objective(problem, result.fractional),
            trace=result.trace,
        ))

    tracks = TrackSet(
        frame=np.array(rec_frame),
        target_id=np.array(rec_tid),
        x=np.array(rec_x),
        y=np.array(rec_y),
        coasted=np.array(rec_coast),
    )
    return tracks, summaries


def _pair_index(frame_col, tid_col, x_col, y_col):
    return {
        (int(f), int(t)): (float(x), float(y))
        for f, t, x, y in zip(frame_col, tid_col, x_col, y_col)
    }


def accuracy_curve(tracks: TrackSet, gt: GroundTruth,
                   max_threshold: int = 50) -> AccuracyCurve:
    """Accuracy at every integer pixel threshold from 1 to ``max_threshold``.

    A (frame, target) pair counts as correct at threshold t when the
    estimate lies within t pixels of ground truth.  Both inputs must cover
    exactly the same pairs.
    """
    if max_threshold < 1:
        raise ValueError("max threshold must be >= 1")
    est = _pair_index(tracks.frame, tracks.target_id, tracks.x, tracks.y)
    ref = _pair_index(gt.frame, gt.target_id, gt.x, gt.y)
    if est.keys() != ref.keys():
        missing = sorted(ref.keys() - est.keys())[:5]
        extra = sorted(est.keys() - ref.keys())[:5]
        raise ValueError(
            f"coverage mismatch between tracks and ground truth; "
            f"missing from tracks: {missing}, unexpected in tracks: {extra}"
        )
    keys = sorted(est.keys())
    errors = np.array([
        math.hypot(est[k][0] - ref[k][0], est[k][1] - ref[k][1]) for k in keys
    ])
    thresholds = np.arange(1, max_threshold + 1)
    accuracy = np.array([(errors <= t).mean() for t in thresholds])
    return AccuracyCurve(thresholds=thresholds, accuracy=accuracy)


def identity_swaps(tracks: TrackSet, gt: GroundTruth) -> int:
    """Count (frame, target) pairs whose estimate sits strictly closer to
    some other target's ground truth than to its own."""
    swaps = 0
    for f in np.unique(gt.frame):
        ref = gt.positions_at(int(f))
        est = tracks.positions_at(int(f))
        if len(ref) != len(est):
            raise ValueError(
                f"frame {f}: {len(est)} estimates for {len(ref)} targets"
            )
        dists = np.linalg.norm(est[:, None, :] - ref[None, :, :], axis=2)
        own = np.diag(dists)
        others = dists + np.diag(np.full(len(ref), np.inf))
        swaps += int((others.min(axis=1) < own).sum())
    return swaps


BENCH_COLUMNS = [
    "size", "seed", "variant", "n_variables", "iterations", "wall_time_s",
    "final_objective", "final_gap", "converged",
]


def bench_solvers(sizes, seeds=5, epsilon: float = 1e-4,
                  candidates_per_target: int = 25,
                  max_iterations: int = 5000,
                  include_exact: bool = True,
                  instance_params: dict | None = None,
                  keep_traces: bool = False) -> list[dict]:
    """Time each solver variant on seeded synthetic problems.

    One row per (size, seed, variant).  The exact enumeration solver is
    included only when the assignment space is at most 10^6 states, which
    restricts it to very small sizes.  ``instance_params`` are forwarded to
    the instance generator; with ``keep_traces`` each row also carries the
    full per-iteration trace under the extra key "trace" (skipped by the
    CSV writer).
    """
    rows = []
    for size in sizes:
        for seed in range(seeds):
            rng = np.random.default_rng(10_000 * size + seed)
            problem = synthetic_frame_problem(size, candidates_per_target, rng,
                                              **(instance_params or {}))
            variants = ["fw", "fw_away", "fw_swap"]
            if include_exact and candidates_per_target ** size <= 10**6:
                variants.append("exact")
            for variant in variants:
                config = SolverConfig(variant=variant, epsilon=epsilon,
                                      max_iterations=max_iterations)
                result = fw_solve(problem, config)
                trace = result.trace
                row = {
                    "size": size,
                    "seed": seed,
                    "variant": variant,
                    "n_variables": problem.layout.n_variables,
                    "iterations": trace.iterations,
                    "wall_time_s": trace.wall_time_s,
                    "final_objective": trace.objective[-1],
                    "final_gap": trace.gap[-1],
                    "converged": result.converged,
                }
                if keep_traces:
                    row["trace"] = trace
                rows.append(row)
    return rows


def write_bench_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS,
                                extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_bench_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != BENCH_COLUMNS:
            raise ValueError(f"unexpected bench header {reader.fieldnames}")
        return list(reader)
