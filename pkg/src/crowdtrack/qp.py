"""Block-simplex quadratic assignment problems.

One simplex block per target: every target must distribute a unit of mass
over its own candidate locations, and a binary solution picks exactly one
candidate per block.  The objective is

    f(x) = c . x + x . Q . x

where c combines appearance, motion and neighborhood-motion costs and Q
stacks pairwise penalty matrices (spatial proximity, group formation).
Q is built from similarity matrices through a normalized-Laplacian
construction (`laplacianize`) which keeps it symmetric PSD, so f is convex
and the simplex relaxation can be solved by conditional-gradient methods
(see `crowdtrack.solver`).

Contents:
    BlockLayout      index bookkeeping for per-target candidate blocks
    LinearCosts      appearance / motion / neighborhood-motion cost vectors
    QuadraticTerm    one sparse symmetric pairwise penalty
    BqpProblem       assembled instance with cached combined c and Q
    Assignment       one chosen candidate per block
    build_problem, objective, gradient, laplacianize, is_feasible
    normalize_scores, scores_to_costs, uniform_point
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "BlockLayout",
    "LinearCosts",
    "QuadraticTerm",
    "BqpProblem",
    "Assignment",
    "build_problem",
    "objective",
    "gradient",
    "laplacianize",
    "is_feasible",
    "normalize_scores",
    "scores_to_costs",
    "uniform_point",
]

# entries smaller than this are dropped from similarity matrices before the
# Laplacian is formed; dropping before normalization keeps the result exactly PSD
SIMILARITY_DROP = 1e-6


class BlockLayout:
    """Maps between per-block candidate indices and the flat variable vector.

    Parameters
    ----------
    block_sizes : sequence of int
        Number of candidate locations per target; all sizes >= 1.
    """

    def __init__(self, block_sizes) -> None:
        sizes = np.atleast_1d(np.asarray(block_sizes, dtype=np.int64))
        if sizes.ndim != 1 or sizes.size == 0:
            raise ValueError("block_sizes must be a non-empty 1-D sequence")
        if np.any(sizes < 1):
            raise ValueError("every block needs at least one candidate")
        self.block_sizes = sizes
        self.n_blocks = int(sizes.size)
        self.starts = np.concatenate(([0], np.cumsum(sizes)))
        self.n_variables = int(self.starts[-1])
        self.block_of = np.repeat(np.arange(self.n_blocks), sizes)
        # uniform block size enables vectorized per-block reductions
        self._uniform = int(sizes[0]) if np.all(sizes == sizes[0]) else None
        self._pad: tuple[np.ndarray, np.ndarray] | None = None

    def _padded_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(n_blocks, max_k) flat indices plus a validity mask, cached."""
        if self._pad is None:
            offsets = np.arange(int(self.block_sizes.max()))
            mask = offsets[None, :] < self.block_sizes[:, None]
            idx = np.where(mask, self.starts[:-1][:, None] + offsets[None, :], 0)
            self._pad = (idx, mask)
        return self._pad

    def __repr__(self) -> str:
        return f"BlockLayout(n_blocks={self.n_blocks}, n_variables={self.n_variables})"

    def block_slice(self, j: int) -> slice:
        return slice(int(self.starts[j]), int(self.starts[j + 1]))

    def globals_of(self, chosen) -> np.ndarray:
        """Flat indices of one chosen candidate per block."""
        chosen = np.asarray(chosen, dtype=np.int64)
        if chosen.shape != (self.n_blocks,):
            raise ValueError(f"expected {self.n_blocks} chosen indices, got {chosen.shape}")
        if np.any(chosen < 0) or np.any(chosen >= self.block_sizes):
            raise ValueError("chosen index outside its block")
        return self.starts[:-1] + chosen

    def locate(self, flat_index: int) -> tuple[int, int]:
        """(block, local index) of a flat variable index."""
        j = int(self.block_of[flat_index])
        return j, int(flat_index - self.starts[j])

    def block_argmin(self, values: np.ndarray) -> np.ndarray:
        """Per-block argmin; ties resolve to the lowest local index."""
        values = np.asarray(values)
        if self._uniform is not None:
            return values.reshape(self.n_blocks, self._uniform).argmin(axis=1)
        idx, mask = self._padded_index()
        padded = np.where(mask, values[idx], np.inf)
        return padded.argmin(axis=1)

    def block_argmax(self, values: np.ndarray) -> np.ndarray:
        """Per-block argmax; ties resolve to the lowest local index."""
        return self.block_argmin(-np.asarray(values, dtype=np.float64))

    def block_sums(self, values: np.ndarray) -> np.ndarray:
        return np.add.reduceat(np.asarray(values, dtype=np.float64), self.starts[:-1])


@dataclass(frozen=True)
class Assignment:
    """One chosen candidate per block, stored as local indices."""

    chosen: tuple[int, ...]

    def as_vector(self, layout: BlockLayout) -> np.ndarray:
        x = np.zeros(layout.n_variables)
        x[layout.globals_of(np.asarray(self.chosen))] = 1.0
        return x


@dataclass
class LinearCosts:
    """Per-candidate cost vectors.

    Each vector holds the negated, per-block min-max normalized score of one
    term, so entries live in [-1, 0] and lower means better.  `motion_weight`
    and `neighbor_weight` scale the motion and neighborhood-motion terms in
    the combined cost.
    """

    appearance: np.ndarray
    motion: np.ndarray
    neighbor_motion: np.ndarray
    motion_weight: float = 0.3
    neighbor_weight: float = 0.2


@dataclass
class QuadraticTerm:
    """One sparse symmetric PSD pairwise penalty.

    kind is "proximity" (repulsive, discourages co-selecting nearby
    locations for different targets) or "grouping" (attractive, rewards
    keeping learned formation distances).
    """

    matrix: sp.csr_matrix
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in ("proximity", "grouping"):
            raise ValueError(f"unknown quadratic term kind {self.kind!r}")
        m = sp.csr_matrix(self.matrix)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"quadratic term must be square, got {m.shape}")
        self.matrix = m


@dataclass
class BqpProblem:
    """Assembled instance: layout + costs, with combined c and Q cached."""

    layout: BlockLayout
    linear: LinearCosts
    quadratics: tuple[QuadraticTerm, ...]
    combined_cost: np.ndarray
    combined_quadratic: sp.csr_matrix | None


def build_problem(layout: BlockLayout, linear: LinearCosts,
                  quadratics=()) -> BqpProblem:
    """Validate dimensions and cache the combined cost vector and Q.

    Raises ValueError naming the offending vector or matrix when a
    dimension does not match the layout.
    """
    n = layout.n_variables
    vectors = {
        "appearance": linear.appearance,
        "motion": linear.motion,
        "neighbor_motion": linear.neighbor_motion,
    }
    clean = {}
    for name, vec in vectors.items():
        arr = np.asarray(vec, dtype=np.float64).ravel()
        if arr.size != n:
            raise ValueError(f"{name} cost vector has length {arr.size}, expected {n}")
        clean[name] = arr
    if linear.motion_weight < 0 or linear.neighbor_weight < 0:
        raise ValueError("term weights must be non-negative")
    combined = (clean["appearance"]
                + linear.motion_weight * clean["motion"]
                + linear.neighbor_weight * clean["neighbor_motion"])

    quads = tuple(quadratics)
    total = None
    for q in quads:
        if not isinstance(q, QuadraticTerm):
            q = QuadraticTerm(q, "proximity")
        if q.matrix.shape != (n, n):
            raise ValueError(
                f"{q.kind} quadratic term has shape {q.matrix.shape}, expected {(n, n)}")
        total = q.matrix if total is None else total + q.matrix
    if total is not None:
        total = sp.csr_matrix(total)
    return BqpProblem(layout, linear, quads, combined, total)


def objective(problem: BqpProblem, x: np.ndarray) -> float:
    """f(x) = c.x + x.Q.x (no 1/2 factor on the quadratic)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size != problem.layout.n_variables:
        raise ValueError(f"x has length {x.size}, expected {problem.layout.n_variables}")
    val = float(problem.combined_cost @ x)
    if problem.combined_quadratic is not None:
        val += float(x @ (problem.combined_quadratic @ x))
    return val


def gradient(problem: BqpProblem, x: np.ndarray) -> np.ndarray:
    """grad f(x) = c + 2 Q x."""
    x = np.asarray(x, dtype=np.float64)
    if x.size != problem.layout.n_variables:
        raise ValueError(f"x has length {x.size}, expected {problem.layout.n_variables}")
    g = problem.combined_cost.copy()
    if problem.combined_quadratic is not None:
        g += 2.0 * (problem.combined_quadratic @ x)
    return g


def laplacianize(similarity, mode: str) -> QuadraticTerm:
    """Turn a non-negative symmetric similarity matrix into a PSD penalty.

    With S_hat = D^{-1/2} S D^{-1/2} (D = diagonal of row sums, zero-degree
    rows stay zero) the spectrum of S_hat lies in [-1, 1], so both

        mode="attract" -> I - S_hat   (low cost when similar pairs co-selected)
        mode="repel"   -> I + S_hat   (high cost when similar pairs co-selected)

    are PSD.  On binary block-simplex points the identity part contributes a
    constant n_blocks, so it never changes which assignment is optimal.

    mode="literal_attract" keeps the asymmetric variant I - D^{-1/2} S D^{1/2}
    (symmetrized, since only the symmetric part enters x.Q.x) for comparison
    experiments; it carries no PSD guarantee and is not used by default.
    """
    S = sp.csr_matrix(similarity, dtype=np.float64)
    if S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {S.shape}")
    asym = abs(S - S.T)
    if asym.nnz and asym.max() > 1e-12:
        raise ValueError("similarity matrix must be symmetric")
    if S.nnz and S.data.min() < -1e-12:
        raise ValueError("similarity entries must be non-negative")
    if S.nnz and S.data.max() > 1.0 + 1e-9:
        raise ValueError("similarity entries must lie in [0, 1]")
    if np.abs(S.diagonal()).max(initial=0.0) > 1e-12:
        raise ValueError("similarity matrix must have a zero diagonal")

    S = S.copy()
    S.data[np.abs(S.data) < SIMILARITY_DROP] = 0.0
    S.eliminate_zeros()

    degrees = np.asarray(S.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(degrees > 0, 1.0 / np.sqrt(np.maximum(degrees, 1e-300)), 0.0)
    D_inv_sqrt = sp.diags(inv_sqrt)
    eye = sp.identity(S.shape[0], format="csr")

    if mode == "attract":
        mat = eye - D_inv_sqrt @ S @ D_inv_sqrt
        kind = "grouping"
    elif mode == "repel":
        mat = eye + D_inv_sqrt @ S @ D_inv_sqrt
        kind = "proximity"
    elif mode == "literal_attract":
        D_sqrt = sp.diags(np.sqrt(degrees))
        raw = D_inv_sqrt @ S @ D_sqrt
        mat = eye - 0.5 * (raw + raw.T)
        kind = "grouping"
    else:
        raise ValueError(f"unknown laplacianize mode {mode!r}")
    return QuadraticTerm(sp.csr_matrix(mat), kind)


def is_feasible(layout: BlockLayout, x: np.ndarray, binary: bool = False,
                atol: float = 1e-9) -> bool:
    """True iff x >= 0 and every block sums to 1 (within atol).

    With binary=True additionally require every entry to be 0 or 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (layout.n_variables,):
        return False
    if not np.all(np.isfinite(x)):
        return False
    if x.min(initial=0.0) < -atol:
        return False
    if np.abs(layout.block_sums(x) - 1.0).max() > atol:
        return False
    if binary:
        if np.abs(x - np.round(x)).max() > atol:
            return False
    return True


def normalize_scores(layout: BlockLayout, raw: np.ndarray) -> np.ndarray:
    """Min-max scale each block to [0, 1]; constant blocks map to zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size != layout.n_variables:
        raise ValueError(f"scores have length {raw.size}, expected {layout.n_variables}")
    lo = np.minimum.reduceat(raw, layout.starts[:-1])
    hi = np.maximum.reduceat(raw, layout.starts[:-1])
    spread = hi - lo
    flat = spread <= 1e-12
    scale = np.where(flat, 1.0, spread)
    out = (raw - np.repeat(lo, layout.block_sizes)) \
        / np.repeat(scale, layout.block_sizes)
    out[np.repeat(flat, layout.block_sizes)] = 0.0
    return out


def scores_to_costs(layout: BlockLayout, raw: np.ndarray) -> np.ndarray:
    """Negated normalized scores: entries in [-1, 0], lower is better."""
    return -normalize_scores(layout, raw)


def uniform_point(layout: BlockLayout) -> np.ndarray:
    """Feasible point spreading each block's mass uniformly (default start)."""
    return np.repeat(1.0 / layout.block_sizes, layout.block_sizes)
