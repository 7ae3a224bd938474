"""Conditional-gradient solvers for block-simplex quadratic programs.

Three first-order variants share the same scaffolding:

    fw        plain conditional gradient: move toward the best vertex
    fw_away   additionally consider moving away from the worst active vertex
    fw_swap   move mass directly from the worst active vertex to the best
              vertex (a pairwise step); drops the worst vertex when its
              whole weight is transferred

plus an exhaustive "exact" oracle for small instances.  The linear
minimization oracle over a product of simplices is a per-block argmin of the
gradient, so every step target is a one-candidate-per-block vertex.  The
classic duality gap  g = grad.(x - s)  upper-bounds the suboptimality of x
and is the stopping criterion.

All variants use exact line search by default: along x + lam*d the objective
is a parabola with minimizer  lam* = -grad.d / (2 d.Q.d),  clipped to the
feasible range.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .qp import (Assignment, BlockLayout, BqpProblem, gradient, is_feasible,
                 objective, uniform_point)

__all__ = [
    "SolverConfig",
    "SolverTrace",
    "SolverResult",
    "ActiveSet",
    "lmo",
    "away_vertex",
    "line_search_exact",
    "duality_gap",
    "fw_solve",
    "round_solution",
    "brute_force_solve",
]

VARIANTS = ("fw", "fw_away", "fw_swap", "exact")

# curvature below this is treated as linear along the step direction
_FLAT_CURVATURE = 1e-14


@dataclass
class SolverConfig:
    variant: str = "fw_swap"
    epsilon: float = 0.01
    max_iterations: int = 2000
    drop_tolerance: float = 1e-12
    # exact line search by default; False uses the 2/(2+k) schedule for the
    # plain variant (away/swap steps always use the closed-form step)
    line_search: bool = True

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown solver variant {self.variant!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class SolverTrace:
    """Per-iteration history of one solve.

    For the away variant the swap columns hold the away-step quantities.
    The terminal record (step_kind "final") holds the objective and gap of
    the returned iterate and takes no step.
    """

    objective: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    step_kind: list = field(default_factory=list)
    step_lambda: list = field(default_factory=list)
    lambda_fw: list = field(default_factory=list)
    lambda_swap: list = field(default_factory=list)
    delta_fw: list = field(default_factory=list)
    delta_swap: list = field(default_factory=list)
    wall_time_us: list = field(default_factory=list)

    def append(self, f_val, gap, kind, lam, lam_fw, lam_sw, d_fw, d_sw, us) -> None:
        self.objective.append(float(f_val))
        self.gap.append(float(gap))
        self.step_kind.append(kind)
        self.step_lambda.append(float(lam))
        self.lambda_fw.append(float(lam_fw))
        self.lambda_swap.append(float(lam_sw))
        self.delta_fw.append(float(d_fw))
        self.delta_swap.append(float(d_sw))
        self.wall_time_us.append(int(us))

    @property
    def iterations(self) -> int:
        """Number of steps taken (the terminal record is not a step)."""
        return sum(1 for k in self.step_kind if k != "final")

    @property
    def wall_time_s(self) -> float:
        return self.wall_time_us[-1] / 1e6 if self.wall_time_us else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "gap", "step_kind",
                             "lambda", "wall_time_us"])
            for i in range(len(self.objective)):
                writer.writerow([i, repr(self.objective[i]), repr(self.gap[i]),
                                 self.step_kind[i], repr(self.step_lambda[i]),
                                 self.wall_time_us[i]])


@dataclass
class SolverResult:
    fractional: np.ndarray
    rounded: Assignment
    trace: SolverTrace
    converged: bool


class ActiveSet:
    """Convex decomposition of the current iterate over visited vertices.

    Vertices are one-candidate-per-block selections kept in insertion order
    (oldest first), each with a weight alpha >= 0 summing to 1, so that
    sum(alpha_v * v) reconstructs the iterate.
    """

    def __init__(self, layout: BlockLayout) -> None:
        self.layout = layout
        # growable buffers; rows beyond _size are garbage
        self._cap = 16
        self._chosen_buf = np.zeros((self._cap, layout.n_blocks), dtype=np.int64)
        # int32 halves the bandwidth of the per-iteration away-vertex gather
        self._globals_buf = np.zeros((self._cap, layout.n_blocks), dtype=np.int32)
        self._alpha_buf = np.zeros(self._cap)
        self._gather_buf = np.zeros((self._cap, layout.n_blocks))
        self._size = 0
        self._keys: list[bytes] = []
        self._pos: dict[bytes, int] = {}

    def _grow(self) -> None:
        self._cap *= 2
        for name in ("_chosen_buf", "_globals_buf"):
            old = getattr(self, name)
            new = np.zeros((self._cap, old.shape[1]), dtype=old.dtype)
            new[: self._size] = old[: self._size]
            setattr(self, name, new)
        alpha = np.zeros(self._cap)
        alpha[: self._size] = self._alpha_buf[: self._size]
        self._alpha_buf = alpha
        self._gather_buf = np.zeros((self._cap, self.layout.n_blocks))

    @classmethod
    def from_point(cls, layout: BlockLayout, x: np.ndarray,
                   tol: float = 1e-12) -> "ActiveSet":
        """Decompose a feasible point into a small set of weighted vertices.

        Couples every block to a shared [0, 1) axis through its cumulative
        mass profile: each distinct cumulative breakpoint starts a new
        segment, and the segment's vertex picks, per block, the candidate
        whose cumulative span covers the segment midpoint.  Per-candidate
        masses are recovered exactly because the spans tile each candidate's
        interval.  A uniform start over equal-size blocks collapses to k
        vertices of weight 1/k; ragged block sizes give at most
        n_variables - n_blocks + 1 segments whose weights are breakpoint
        gaps.  A greedy argmax peel was tried first here and produced
        weights as small as 1e-6 on ragged blocks, which capped swap steps
        (lambda_max = alpha of the away vertex) into uselessness.
        """
        active = cls(layout)
        x = np.asarray(x, dtype=np.float64)
        cums = []
        cuts = [np.array([0.0, 1.0])]
        for j in range(layout.n_blocks):
            cum = np.concatenate(([0.0], np.cumsum(x[layout.block_slice(j)])))
            cum[-1] = 1.0  # guard cumsum rounding so every midpoint lands inside
            cums.append(cum)
            cuts.append(cum[1:-1])
        edges = np.unique(np.concatenate(cuts))
        weights = np.diff(edges)
        mids = edges[:-1] + 0.5 * weights
        sel = np.empty((mids.size, layout.n_blocks), dtype=np.int64)
        for j in range(layout.n_blocks):
            sel[:, j] = np.searchsorted(cums[j], mids, side="right") - 1
        for t in np.nonzero(weights > tol)[0]:
            active.add(sel[t], float(weights[t]))
        total = active._alpha_buf[: active._size].sum()
        if total > 0:
            active._alpha_buf[: active._size] /= total
        return active

    def __len__(self) -> int:
        return self._size

    @property
    def alphas(self) -> np.ndarray:
        return self._alpha_buf[: self._size].copy()

    @property
    def vertices(self) -> list[Assignment]:
        return [Assignment(tuple(int(c) for c in row))
                for row in self._chosen_buf[: self._size]]

    @staticmethod
    def _key(chosen) -> bytes:
        # bytes keys hash in C and cache their hash, unlike int tuples
        return np.ascontiguousarray(chosen, dtype=np.int64).tobytes()

    def position_of(self, chosen) -> int | None:
        return self._pos.get(self._key(chosen))

    def alpha_at(self, pos: int) -> float:
        return float(self._alpha_buf[pos])

    def chosen_at(self, pos: int) -> np.ndarray:
        return self._chosen_buf[pos]

    def globals_at(self, pos: int) -> np.ndarray:
        return self._globals_buf[pos]

    def add(self, chosen, weight: float) -> int:
        """Add weight to a vertex, inserting it (newest) if absent."""
        key = self._key(chosen)
        pos = self._pos.get(key)
        if pos is None:
            if self._size == self._cap:
                self._grow()
            pos = self._size
            self._chosen_buf[pos] = np.asarray(chosen, dtype=np.int64)
            self._globals_buf[pos] = self.layout.globals_of(self._chosen_buf[pos])
            self._alpha_buf[pos] = float(weight)
            self._keys.append(key)
            self._pos[key] = pos
            self._size += 1
            return pos
        self._alpha_buf[pos] += float(weight)
        return pos

    def add_at(self, pos: int, delta: float) -> None:
        self._alpha_buf[pos] += float(delta)

    def scale(self, factor: float) -> None:
        self._alpha_buf[: self._size] *= factor

    def remove_at(self, pos: int) -> None:
        last = self._size - 1
        for buf in (self._chosen_buf, self._globals_buf, self._alpha_buf):
            buf[pos:last] = buf[pos + 1 : last + 1]
        del self._pos[self._keys.pop(pos)]
        for key in self._keys[pos:]:
            self._pos[key] -= 1
        self._size = last

    def prune(self, tol: float) -> None:
        """Drop vertices whose weight fell to (numerically) zero."""
        alphas = self._alpha_buf[: self._size]
        if self._size == 0 or alphas.min() > tol:
            return
        keep = np.nonzero(alphas > tol)[0]
        n = len(keep)
        self._chosen_buf[:n] = self._chosen_buf[keep]
        self._globals_buf[:n] = self._globals_buf[keep]
        self._alpha_buf[:n] = self._alpha_buf[keep]
        self._keys = [self._keys[i] for i in keep]
        self._pos = {key: i for i, key in enumerate(self._keys)}
        self._size = n

    def away_position(self, grad: np.ndarray) -> int:
        """Index of the active vertex maximizing <v, grad>; ties -> oldest."""
        if self._size == 0:
            raise ValueError("active set is empty")
        taken = np.take(grad, self._globals_buf[: self._size],
                        out=self._gather_buf[: self._size])
        return int(np.argmax(taken.sum(axis=1)))

    def reconstruct(self) -> np.ndarray:
        x = np.zeros(self.layout.n_variables)
        rows = self._globals_buf[: self._size]
        np.add.at(x, rows.ravel(),
                  np.repeat(self._alpha_buf[: self._size], rows.shape[1]))
        return x


def lmo(problem: BqpProblem, grad: np.ndarray) -> Assignment:
    """Linear minimization oracle: per-block argmin of the gradient."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.size != problem.layout.n_variables:
        raise ValueError(f"gradient has length {grad.size}, "
                         f"expected {problem.layout.n_variables}")
    return Assignment(tuple(int(i) for i in problem.layout.block_argmin(grad)))


def away_vertex(active: ActiveSet, grad: np.ndarray) -> Assignment:
    """Active vertex maximizing <v, grad> (the worst contributor)."""
    if len(active) == 0:
        raise ValueError("active set is empty")
    pos = active.away_position(np.asarray(grad, dtype=np.float64))
    return Assignment(tuple(int(c) for c in active.chosen_at(pos)))


def _closed_form_step(g_dot_d: float, d_q_d: float,
                      lam_max: float) -> tuple[float, bool]:
    """Minimizer of the parabola f(x + lam d) over [0, lam_max].

    Returns (lambda, hit_upper).  Flat directions (d.Q.d ~ 0) go all the way
    to lam_max when descending, and stay put otherwise.
    """
    if d_q_d <= _FLAT_CURVATURE:
        if g_dot_d < 0:
            return lam_max, True
        return 0.0, False
    lam = -g_dot_d / (2.0 * d_q_d)
    if lam >= lam_max:
        return lam_max, True
    return max(lam, 0.0), False


def line_search_exact(problem: BqpProblem, x: np.ndarray, d: np.ndarray,
                      lam_max: float) -> float:
    """Exact step along d from x, clipped to [0, lam_max]."""
    if not lam_max > 0:
        raise ValueError("lam_max must be positive")
    d = np.asarray(d, dtype=np.float64)
    g_dot_d = float(gradient(problem, x) @ d)
    if problem.combined_quadratic is None:
        d_q_d = 0.0
    else:
        d_q_d = float(d @ (problem.combined_quadratic @ d))
    lam, _ = _closed_form_step(g_dot_d, d_q_d, lam_max)
    return lam


def duality_gap(problem: BqpProblem, x: np.ndarray, s: Assignment) -> float:
    """grad f(x) . (x - s); upper-bounds f(x) - f(x*) for convex f."""
    g = gradient(problem, x)
    s_glob = problem.layout.globals_of(np.asarray(s.chosen))
    return float(g @ x - g[s_glob].sum())


def round_solution(layout: BlockLayout, x: np.ndarray) -> Assignment:
    """Nearest binary point: per-block argmax of x, ties -> lowest index."""
    x = np.asarray(x, dtype=np.float64)
    if x.size != layout.n_variables:
        raise ValueError(f"x has length {x.size}, expected {layout.n_variables}")
    return Assignment(tuple(int(i) for i in layout.block_argmax(x)))


def fw_solve(problem: BqpProblem, config: SolverConfig | None = None,
             x0: np.ndarray | None = None, callback=None) -> SolverResult:
    """Minimize the relaxed problem over the product of simplices.

    Parameters
    ----------
    problem : BqpProblem
    config : SolverConfig, optional
        Variant, target duality gap and iteration budget.
    x0 : ndarray, optional
        Feasible start; defaults to the uniform point.  For the away/swap
        variants the start is decomposed into an explicit vertex combination.
    callback : callable, optional
        Called as callback(iteration, x, active_set, record) after every
        trace record; used by diagnostics and tests.

    Returns
    -------
    SolverResult with the fractional iterate, its per-block argmax rounding,
    the iteration trace and a convergence flag (duality gap <= epsilon).
    """
    cfg = config if config is not None else SolverConfig()
    layout = problem.layout

    if cfg.variant == "exact":
        assignment, value = brute_force_solve(problem)
        trace = SolverTrace()
        trace.append(value, 0.0, "final", 0.0, math.nan, math.nan,
                     math.nan, math.nan, 0)
        return SolverResult(assignment.as_vector(layout), assignment, trace, True)

    x = uniform_point(layout) if x0 is None else np.array(x0, dtype=np.float64)
    if not is_feasible(layout, x):
        raise ValueError("x0 is not feasible for the block-simplex constraints")

    use_active = cfg.variant in ("fw_away", "fw_swap")
    active = ActiveSet.from_point(layout, x) if use_active else None
    c = problem.combined_cost
    Q = problem.combined_quadratic
    n_var = layout.n_variables
    trace = SolverTrace()
    converged = False
    start = time.perf_counter()

    def elapsed_us() -> int:
        return int((time.perf_counter() - start) * 1e6)

    def emit(it, f_val, gap, kind, lam, lam_fw, lam_sw, d_fw, d_sw) -> None:
        trace.append(f_val, gap, kind, lam, lam_fw, lam_sw, d_fw, d_sw,
                     elapsed_us())
        if callback is not None:
            callback(it, x, active, {"iteration": it, "objective": f_val,
                                     "gap": gap, "step_kind": kind,
                                     "lambda": lam})

    # Qx is maintained incrementally: every step direction touches at most
    # one variable per block, so Q columns gathered for the step update it
    # exactly; a periodic full matvec stops rounding drift from accumulating.
    refresh_every = 50
    Qx = Q @ x if Q is not None else None
    if Q is not None:
        if Q.nnz >= 20_000:
            # large instances: sum the selected rows directly (Q symmetric)
            indptr, indices, data = Q.indptr, Q.indices, Q.data

            def vertex_matvec(glob):
                cols = np.concatenate(
                    [indices[indptr[r]:indptr[r + 1]] for r in glob])
                vals = np.concatenate(
                    [data[indptr[r]:indptr[r + 1]] for r in glob])
                return np.bincount(cols, weights=vals, minlength=n_var)
        else:
            # small instances: a plain matvec beats gather overhead
            scratch = np.zeros(n_var)

            def vertex_matvec(glob):
                scratch.fill(0.0)
                scratch[glob] = 1.0
                return Q @ scratch

    it = 0
    for it in range(cfg.max_iterations):
        if Q is not None:
            if it and it % refresh_every == 0:
                Qx = Q @ x
            x_q_x = float(x @ Qx)
            f_val = float(c @ x) + x_q_x
            g = c + 2.0 * Qx
        else:
            x_q_x = 0.0
            f_val = float(c @ x)
            g = c
        if not np.isfinite(f_val):
            raise FloatingPointError(f"objective became non-finite at iteration {it}")

        s_local = layout.block_argmin(g)
        s_glob = layout.globals_of(s_local)
        gap = float(g @ x - g[s_glob].sum())
        if gap <= cfg.epsilon:
            converged = True
            emit(it, f_val, gap, "final", 0.0, math.nan, math.nan,
                 math.nan, math.nan)
            break

        # toward-vertex step; Q is symmetric so summing rows gives Q @ s
        g_d_fw = -gap
        if Q is not None:
            Qs = vertex_matvec(s_glob)
            s_q_s = float(Qs[s_glob].sum())
            s_q_x = float(Qx[s_glob].sum())
            d_q_d_fw = s_q_s - 2.0 * s_q_x + x_q_x
        else:
            Qs = None
            s_q_s = 0.0
            d_q_d_fw = 0.0
        if cfg.line_search:
            lam_fw, _ = _closed_form_step(g_d_fw, d_q_d_fw, 1.0)
        else:
            lam_fw = 2.0 / (2.0 + it)
        delta_fw = -(lam_fw * g_d_fw + lam_fw * lam_fw * d_q_d_fw)

        kind = "fw"
        lam = lam_fw
        lam_alt = math.nan
        delta_alt = math.nan
        y_pos = -1
        y_glob = None
        drop = False

        if cfg.variant == "fw_swap" and len(active) > 0:
            y_pos = active.away_position(g)
            # view into the active-set buffer; valid until vertices shift,
            # which only happens at the end of the apply block below
            y_glob = active.globals_at(y_pos)
            if not np.array_equal(y_glob, s_glob):
                alpha_y = active.alpha_at(y_pos)
                g_d_sw = float(g[s_glob].sum() - g[y_glob].sum())
                if Q is not None:
                    Qy = vertex_matvec(y_glob)
                    d_q_d_sw = s_q_s - 2.0 * float(Qs[y_glob].sum()) \
                        + float(Qy[y_glob].sum())
                else:
                    Qy = None
                    d_q_d_sw = 0.0
                lam_sw, hit = _closed_form_step(g_d_sw, d_q_d_sw, alpha_y)
                delta_sw = -(lam_sw * g_d_sw + lam_sw * lam_sw * d_q_d_sw)
                lam_alt, delta_alt = lam_sw, delta_sw
                if delta_sw >= delta_fw:
                    kind = "swap_drop" if hit else "swap_add"
                    lam = lam_sw
                    drop = hit

        elif cfg.variant == "fw_away" and len(active) > 1:
            y_pos = active.away_position(g)
            y_glob = active.globals_at(y_pos)
            alpha_y = active.alpha_at(y_pos)
            if alpha_y < 1.0 - 1e-12:
                g_d_aw = float(g @ x - g[y_glob].sum())
                if Q is not None:
                    Qy = vertex_matvec(y_glob)
                    d_q_d_aw = x_q_x - 2.0 * float(Qx[y_glob].sum()) \
                        + float(Qy[y_glob].sum())
                else:
                    Qy = None
                    d_q_d_aw = 0.0
                lam_max_aw = alpha_y / (1.0 - alpha_y)
                lam_aw, hit = _closed_form_step(g_d_aw, d_q_d_aw, lam_max_aw)
                delta_aw = -(lam_aw * g_d_aw + lam_aw * lam_aw * d_q_d_aw)
                lam_alt, delta_alt = lam_aw, delta_aw
                if delta_aw >= delta_fw:
                    kind = "away_drop" if hit else "away"
                    lam = lam_aw
                    drop = hit

        # apply the chosen step to x, Qx, and the vertex decomposition;
        # only entries losing mass can dip below zero by rounding, so only
        # those get clamped
        if kind == "fw":
            x *= (1.0 - lam)
            x[s_glob] += lam
            if Q is not None:
                Qx = (1.0 - lam) * Qx + lam * Qs
            if active is not None:
                active.scale(1.0 - lam)
                active.add(s_local, lam)
        elif kind in ("swap_add", "swap_drop"):
            x[s_glob] += lam
            x[y_glob] = np.maximum(x[y_glob] - lam, 0.0)
            if Q is not None:
                Qx = Qx + lam * (Qs - Qy)
            active.add(s_local, lam)
            active.add_at(y_pos, -lam)
            if drop:
                active.remove_at(y_pos)
        else:  # away / away_drop
            x *= (1.0 + lam)
            x[y_glob] = np.maximum(x[y_glob] - lam, 0.0)
            if Q is not None:
                Qx = (1.0 + lam) * Qx - lam * Qy
            active.scale(1.0 + lam)
            active.add_at(y_pos, -lam)
            if drop:
                active.remove_at(y_pos)
        if active is not None:
            active.prune(cfg.drop_tolerance)

        emit(it, f_val, gap, kind, lam, lam_fw, lam_alt, delta_fw, delta_alt)
    else:
        # budget exhausted without reaching the gap target
        f_val = objective(problem, x)
        s = lmo(problem, gradient(problem, x))
        gap = duality_gap(problem, x, s)
        converged = gap <= cfg.epsilon
        emit(cfg.max_iterations, f_val, gap, "final", 0.0, math.nan, math.nan,
             math.nan, math.nan)

    rounded = round_solution(layout, x)
    return SolverResult(x, rounded, trace, converged)


def brute_force_solve(problem: BqpProblem, forbid_shared_pixels: bool = False,
                      pixel_ids: np.ndarray | None = None
                      ) -> tuple[Assignment, float]:
    """Exhaustive minimum over all binary assignments.

    Only feasible when the product of block sizes is at most 10^6.  With
    forbid_shared_pixels=True, assignments placing two targets on the same
    pixel are excluded; pixel_ids maps every flat variable index to a pixel
    identity and must be provided in that case.  Ties resolve to the
    lexicographically smallest assignment.
    """
    layout = problem.layout
    total = math.prod(int(k) for k in layout.block_sizes)
    if total > 1_000_000:
        raise ValueError(f"{total} assignments exceed the enumeration limit of 1e6")
    if forbid_shared_pixels and pixel_ids is None:
        raise ValueError("forbid_shared_pixels requires pixel_ids")
    if pixel_ids is not None:
        pixel_ids = np.asarray(pixel_ids)
        if pixel_ids.shape != (layout.n_variables,):
            raise ValueError(f"pixel_ids has shape {pixel_ids.shape}, "
                             f"expected ({layout.n_variables},)")

    c = problem.combined_cost
    Q = problem.combined_quadratic
    n = layout.n_blocks
    starts = layout.starts[:-1]

    if Q is not None and n == 1:
        diag = Q.diagonal()
        vals = c + diag
        best = int(np.argmin(vals))
        return Assignment((best,)), float(vals[best])

    Qd = None
    if Q is not None:
        if layout.n_variables > 3000:
            raise ValueError("quadratic term too large to densify for enumeration")
        Qd = Q.toarray()

    ranges = [range(int(k)) for k in layout.block_sizes]
    best_val = math.inf
    best_combo = None
    chunk_size = 65536
    combos = itertools.product(*ranges)
    while True:
        chunk = list(itertools.islice(combos, chunk_size))
        if not chunk:
            break
        idx = np.asarray(chunk, dtype=np.int64)
        glob = idx + starts
        vals = c[glob].sum(axis=1)
        if Qd is not None:
            for a in range(n):
                ga = glob[:, a]
                for b in range(n):
                    vals += Qd[ga, glob[:, b]]
        if forbid_shared_pixels:
            pids = np.sort(pixel_ids[glob], axis=1)
            shared = (pids[:, 1:] == pids[:, :-1]).any(axis=1)
            vals[shared] = math.inf
        pos = int(np.argmin(vals))
        if vals[pos] < best_val:
            best_val = float(vals[pos])
            best_combo = tuple(int(i) for i in idx[pos])
    if best_combo is None or not math.isfinite(best_val):
        raise RuntimeError("no feasible assignment under the shared-pixel rule")
    return Assignment(best_combo), best_val
