"""Candidate location generation for per-target search.

Candidates are integer pixel positions sampled densely in a square window
around each target's predicted location.  For speed, the dense set can be
pruned down to the strongest local maxima of a per-candidate score map plus
a small fixed pattern of offsets around each maximum, which shrinks the
optimization problem by more than an order of magnitude without moving the
best-scoring location.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SearchRegion",
    "PruneConfig",
    "dense_candidates",
    "local_maxima",
    "prune_candidates",
]

# Offsets added around each kept local maximum: the ring of the 5x5 box at
# Chebyshev radius 2 subsampled to its even positions, plus a horizontal
# fine pair.  All ten stay inside a 6x6 pixel neighborhood of the maximum.
EXTRA_OFFSETS = np.array(
    [
        (-2, -2), (0, -2), (2, -2),
        (-2, 0), (2, 0),
        (-2, 2), (0, 2), (2, 2),
        (-1, 0), (1, 0),
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class SearchRegion:
    """Square window centered on a predicted target position.

    ``half_extent`` is measured in pixels; the window spans
    ``center ± half_extent`` along both axes.
    """

    center: tuple[float, float]
    half_extent: float

    def __post_init__(self) -> None:
        if self.half_extent < 1:
            raise ValueError(
                f"search half_extent must be >= 1 pixel, got {self.half_extent}"
            )


@dataclass(frozen=True)
class PruneConfig:
    """Controls extrema-based candidate pruning.

    ``m`` local maxima are kept; around each, ``extra_per_extremum`` fixed
    offsets are added, so the pruned set has at most ``m * 11`` points.
    """

    m: int = 3
    extra_per_extremum: int = 10

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"extrema count m must be >= 1, got {self.m}")
        if self.extra_per_extremum != EXTRA_OFFSETS.shape[0]:
            raise ValueError(
                "extra_per_extremum is fixed by the offset pattern "
                f"({EXTRA_OFFSETS.shape[0]} points), got {self.extra_per_extremum}"
            )


def dense_candidates(
    region: SearchRegion,
    stride: int = 1,
    frame_size: tuple[int, int] | None = None,
) -> np.ndarray:
    """Integer grid of candidate positions covering ``region``.

    The grid anchors at the pixel nearest the (possibly fractional) region
    center, so an interior region always yields the same point count
    regardless of sub-pixel phase.  Points run row-major (left to right,
    then top to bottom) with the given stride, clipped to ``frame_size``
    (width, height) when provided.  Returns an (n, 2) int array of (x, y)
    positions.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1 pixel, got {stride}")
    cx, cy = region.center
    reach = math.floor(region.half_extent)
    offsets = np.arange(-reach, reach + 1, stride)
    xs = math.floor(cx + 0.5) + offsets
    ys = math.floor(cy + 0.5) + offsets
    if frame_size is not None:
        width, height = frame_size
        xs = xs[(xs >= 0) & (xs < width)]
        ys = ys[(ys >= 0) & (ys < height)]
    if xs.size == 0 or ys.size == 0:
        raise ValueError(
            f"search region centered at ({cx}, {cy}) with half_extent "
            f"{region.half_extent} contains no in-bounds grid points"
        )
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()]).astype(np.int64)


def _grid_shape(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Recover (xs, ys) axes from a row-major rectangular grid of points."""
    xs = np.unique(points[:, 0])
    ys = np.unique(points[:, 1])
    if xs.size * ys.size != points.shape[0]:
        raise ValueError(
            f"candidate points do not form a rectangular grid: "
            f"{points.shape[0]} points but {xs.size} x {ys.size} axes"
        )
    gx, gy = np.meshgrid(xs, ys)
    expected = np.column_stack([gx.ravel(), gy.ravel()])
    if not np.array_equal(expected, points):
        raise ValueError("candidate points are not in row-major grid order")
    return xs, ys


def local_maxima(points: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Indices of grid points whose score is >= all 8-neighbors.

    Ties count as maxima, so a plateau yields every plateau point.  Indices
    come back in row-major (ascending) order.
    """
    xs, ys = _grid_shape(points)
    field = scores.reshape(ys.size, xs.size)
    padded = np.full((ys.size + 2, xs.size + 2), -np.inf)
    padded[1:-1, 1:-1] = field
    is_max = np.ones_like(field, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            shifted = padded[1 + dy : 1 + dy + ys.size, 1 + dx : 1 + dx + xs.size]
            is_max &= field >= shifted
    return np.flatnonzero(is_max.ravel())


def prune_candidates(
    points: np.ndarray,
    scores: np.ndarray,
    cfg: PruneConfig | None = None,
) -> np.ndarray:
    """Reduce a dense candidate grid to extrema plus fixed nearby offsets.

    Keeps the ``cfg.m`` highest-scoring local maxima of the score field
    (ties break toward the lowest row-major index) and adds the fixed
    offset pattern around each, deduplicated.  The maxima themselves are
    always in the output.
    """
    if cfg is None:
        cfg = PruneConfig()
    points = np.asarray(points)
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (points.shape[0],):
        raise ValueError(
            f"scores have shape {scores.shape}, expected ({points.shape[0]},)"
        )
    maxima = local_maxima(points, scores)
    # stable sort on negated scores: highest first, lowest index on ties
    order = np.argsort(-scores[maxima], kind="stable")
    kept = maxima[order[: cfg.m]]

    out: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for idx in kept:
        peak = (int(points[idx, 0]), int(points[idx, 1]))
        if peak not in seen:
            seen.add(peak)
            out.append(peak)
        for dx, dy in EXTRA_OFFSETS:
            p = (peak[0] + int(dx), peak[1] + int(dy))
            if p not in seen:
                seen.add(p)
                out.append(p)
    return np.array(out, dtype=np.int64)
