"""Seeded synthetic problem instances shaped like tracker frames.

Benchmarks and solver stress tests want many independent instances without
running the full pipeline, so this builds them directly: targets on a
jittered grid, one near-true candidate plus scattered ones per target,
distance-decayed unary scores with additive noise, a repulsive proximity
term from actual candidate geometry and an attractive chain-formation term
over small planted groups.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .motion import proximity_similarity
from .qp import (SIMILARITY_DROP, BlockLayout, BqpProblem, LinearCosts,
                 build_problem, laplacianize, scores_to_costs)

__all__ = ["synthetic_frame_problem"]


def synthetic_frame_problem(n_targets: int, candidates_per_target: int,
                            rng: np.random.Generator, *,
                            target_size: float = 10.0,
                            spacing_factor: float = 1.7,
                            score_noise: float = 0.3,
                            group_size: int = 4,
                            include_proximity: bool = True,
                            include_group: bool = True) -> BqpProblem:
    """One tracking-like instance; deterministic for a given rng state.

    Candidate 0 of each block sits near the target's true position and
    unary scores decay with distance from it, so instances have a planted
    but noisy solution the quadratic terms can still overturn.
    """
    n, k = int(n_targets), int(candidates_per_target)
    if n < 1 or k < 1:
        raise ValueError("need at least one target and one candidate")
    u = float(target_size)
    side = int(np.ceil(np.sqrt(n)))
    gx, gy = np.meshgrid(np.arange(side), np.arange(side), indexing="xy")
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)[:n] * spacing_factor * u
    centers = centers + rng.uniform(-0.25 * u, 0.25 * u, size=(n, 2))

    offsets = rng.uniform(-u, u, size=(n, k, 2))
    offsets[:, 0, :] *= 0.15  # candidate 0 stays near the truth
    points = (centers[:, None, :] + offsets).reshape(-1, 2)
    block_ids = np.repeat(np.arange(n), k)
    layout = BlockLayout([k] * n)

    sigma = u / 2.0
    dist_true = np.linalg.norm(points - np.repeat(centers, k, axis=0), axis=1)
    appearance = np.exp(-dist_true ** 2 / (2 * sigma ** 2)) \
        + score_noise * rng.random(n * k)
    predicted = centers + rng.normal(0.0, 0.15 * u, size=(n, 2))
    dist_pred = np.linalg.norm(points - np.repeat(predicted, k, axis=0), axis=1)
    motion = np.exp(-dist_pred ** 2 / (2 * sigma ** 2)) \
        + score_noise * rng.random(n * k)
    nmotion = np.exp(-dist_pred ** 2 / (2 * sigma ** 2)) \
        + score_noise * rng.random(n * k)
    linear = LinearCosts(scores_to_costs(layout, appearance),
                         scores_to_costs(layout, motion),
                         scores_to_costs(layout, nmotion))

    quads = []
    if include_proximity:
        S = proximity_similarity(points, block_ids, sigma)
        quads.append(laplacianize(S, "repel"))
    if include_group and n >= 2:
        S_g = _chain_formation_similarity(points, centers, layout,
                                          group_size, sigma)
        quads.append(laplacianize(S_g, "attract"))
    return build_problem(layout, linear, quads)


def _chain_formation_similarity(points, centers, layout, group_size, sigma):
    """Attractive term along chains of consecutive targets in small groups."""
    n = layout.n_blocks
    k = layout.block_sizes[0]
    labels = np.arange(n) // max(group_size, 2)
    rows, cols, vals = [], [], []
    for g in np.unique(labels):
        members = np.where(labels == g)[0]
        for a, b in zip(members, members[1:]):
            rest = float(np.linalg.norm(centers[a] - centers[b]))
            pa = points[a * k:(a + 1) * k]
            pb = points[b * k:(b + 1) * k]
            dist = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
            dev = dist - rest
            mask = np.abs(dev) <= 3.0 * sigma
            ii, jj = np.nonzero(mask)
            if ii.size == 0:
                continue
            v = np.exp(-dev[ii, jj] ** 2 / (2 * sigma ** 2))
            keep = v >= SIMILARITY_DROP
            ii, jj, v = ii[keep], jj[keep], v[keep]
            rows.extend([a * k + ii, b * k + jj])
            cols.extend([b * k + jj, a * k + ii])
            vals.extend([v, v])
    l = layout.n_variables
    if not rows:
        return sp.csr_matrix((l, l))
    return sp.csr_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(l, l))
