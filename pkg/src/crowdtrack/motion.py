"""Motion, neighborhood and group context for tracked targets.

Unary terms:
    motion_cost               constant-velocity Gaussian around p + v
    neighborhood_motion_cost  mixture of Gaussians around p_i + v_j for
                              coherently moving neighbors j, weighted by
                              proximity

Pairwise similarity builders (fed to qp.laplacianize):
    proximity_similarity      Gaussian of cross-target candidate distance
    group_similarity          Gaussian of deviation from learned formation
                              distances along group spanning-tree edges

Group structure:
    coherent_groups           single-linkage clustering of targets whose
                              recent velocities align and who stay close
    build_group_mst           deterministic Euclidean minimum spanning tree
    GroupModel / build_group_model
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .qp import SIMILARITY_DROP

__all__ = [
    "TargetState",
    "MotionModel",
    "NeighborSet",
    "GroupModel",
    "motion_cost",
    "coherent_groups",
    "build_neighbor_sets",
    "neighborhood_motion_cost",
    "proximity_similarity",
    "build_group_mst",
    "build_group_model",
    "group_similarity",
]


@dataclass
class TargetState:
    """Snapshot of one tracked target."""

    target_id: int
    position: np.ndarray          # (2,) x, y
    velocity: np.ndarray          # (2,) pixels/frame
    history: list = field(default_factory=list)   # past positions, oldest first
    group_label: int = -1
    model: object = None          # appearance model, owned by the pipeline


@dataclass
class MotionModel:
    """Constant-velocity model with Gaussian spread.

    covariance defaults to diag((target_size/2)^2) when built through
    `MotionModel.for_target_size`.
    """

    covariance: np.ndarray

    def __post_init__(self) -> None:
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (2, 2):
            raise ValueError(f"covariance must be 2x2, got {cov.shape}")
        if np.abs(cov - cov.T).max() > 1e-12:
            raise ValueError("covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive definite") from None
        self.covariance = cov
        self._inv = np.linalg.inv(cov)

    @classmethod
    def for_target_size(cls, target_size: float) -> "MotionModel":
        s = (target_size / 2.0) ** 2
        return cls(np.diag([s, s]))


@dataclass
class NeighborSet:
    """Coherent neighbors of one target with proximity weights.

    Weights are exp(-d_ij / u) over the kept neighbors, normalized to sum
    to 1 (u is the target size).  Velocities are snapshots taken when the
    set was built.
    """

    neighbor_ids: tuple[int, ...]
    weights: np.ndarray
    velocities: np.ndarray        # (m, 2)


def motion_cost(state: TargetState, model: MotionModel,
                candidates: np.ndarray) -> np.ndarray:
    """Unnormalized Gaussian score of each candidate around p + v."""
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    mean = state.position + state.velocity
    diff = candidates - mean
    quad = np.einsum("ni,ij,nj->n", diff, model._inv, diff)
    return np.exp(-0.5 * quad)


def neighborhood_motion_cost(state: TargetState, neighbors: NeighborSet,
                             model: MotionModel,
                             candidates: np.ndarray) -> np.ndarray:
    """Score candidates against neighbors' velocities applied at p_i.

    sum_j w_j N(p_i + v_j, cov): each coherent neighbor votes for where the
    target should be if it moved like them.  Empty neighbor sets give zeros.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if len(neighbors.neighbor_ids) == 0:
        return np.zeros(len(candidates))
    means = state.position[None, :] + neighbors.velocities    # (m, 2)
    diff = candidates[:, None, :] - means[None, :, :]         # (c, m, 2)
    quad = np.einsum("cmi,ij,cmj->cm", diff, model._inv, diff)
    return np.exp(-0.5 * quad) @ neighbors.weights


def build_neighbor_sets(states: list[TargetState], labels: np.ndarray,
                        target_size: float,
                        max_neighbors: int = 5) -> list[NeighborSet]:
    """Per target: up to max_neighbors nearest same-group members."""
    labels = np.asarray(labels)
    positions = np.stack([s.position for s in states])
    velocities = np.stack([s.velocity for s in states])
    out = []
    for i, state in enumerate(states):
        mates = np.where((labels == labels[i]) & (np.arange(len(states)) != i))[0]
        if mates.size == 0:
            out.append(NeighborSet((), np.zeros(0), np.zeros((0, 2))))
            continue
        dists = np.linalg.norm(positions[mates] - state.position, axis=1)
        order = np.argsort(dists, kind="stable")[:max_neighbors]
        kept = mates[order]
        w = np.exp(-dists[order] / target_size)
        w = w / w.sum()
        out.append(NeighborSet(tuple(int(m) for m in kept), w,
                               velocities[kept].copy()))
    return out


def _velocity_series(history, window: int) -> np.ndarray | None:
    """Flattened frame-to-frame velocities over the trailing window."""
    pts = np.asarray(history[-window:], dtype=np.float64)
    if len(pts) < 2:
        return None
    return np.diff(pts, axis=0)


def coherent_groups(histories: list, window: int = 10,
                    target_size: float = 6.0, cos_threshold: float = 0.9,
                    distance_factor: float = 4.0) -> np.ndarray:
    """Single-linkage grouping of targets that move together.

    Two targets are linked when the cosine similarity of their recent
    velocity series is >= cos_threshold and their mean distance over the
    shared window is <= distance_factor * target_size.  Labels are assigned
    in order of each group's smallest member index, so the output is
    deterministic for a given input order.  Targets with fewer than two
    recorded positions stay singletons.
    """
    n = len(histories)
    series = [_velocity_series(h, window) for h in histories]
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        if series[i] is None:
            continue
        hist_i = np.asarray(histories[i][-window:], dtype=np.float64)
        for j in range(i + 1, n):
            if series[j] is None:
                continue
            hist_j = np.asarray(histories[j][-window:], dtype=np.float64)
            m = min(len(hist_i), len(hist_j))
            vi = np.diff(hist_i[-m:], axis=0).ravel()
            vj = np.diff(hist_j[-m:], axis=0).ravel()
            ni, nj = np.linalg.norm(vi), np.linalg.norm(vj)
            if ni < 1e-9 and nj < 1e-9:
                cos = 1.0  # both stationary: trivially coherent
            elif ni < 1e-9 or nj < 1e-9:
                cos = 0.0
            else:
                cos = float(vi @ vj) / (ni * nj)
            mean_dist = float(np.linalg.norm(hist_i[-m:] - hist_j[-m:],
                                             axis=1).mean())
            if cos >= cos_threshold and mean_dist <= distance_factor * target_size:
                adj[i, j] = adj[j, i] = True

    labels = np.full(n, -1, dtype=np.int64)
    next_label = 0
    for i in range(n):
        if labels[i] != -1:
            continue
        stack = [i]
        labels[i] = next_label
        while stack:
            u = stack.pop()
            for v in np.nonzero(adj[u])[0]:
                if labels[v] == -1:
                    labels[v] = next_label
                    stack.append(int(v))
        next_label += 1
    return labels


def proximity_similarity(points: np.ndarray, block_ids: np.ndarray,
                         sigma: float) -> sp.csr_matrix:
    """Gaussian similarity of cross-target candidate pairs.

    S_ij = exp(-|p_i - p_j|^2 / (2 sigma^2)) for candidates of different
    targets within 3*sigma of each other; zero on the diagonal and within
    blocks.  Symmetric sparse output sized to the flat candidate vector.
    """
    points = np.asarray(points, dtype=np.float64)
    block_ids = np.asarray(block_ids)
    l = len(points)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    tree = cKDTree(points)
    pairs = tree.query_pairs(3.0 * sigma, output_type="ndarray")
    if len(pairs):
        pairs = pairs[block_ids[pairs[:, 0]] != block_ids[pairs[:, 1]]]
    if len(pairs) == 0:
        return sp.csr_matrix((l, l))
    d2 = np.sum((points[pairs[:, 0]] - points[pairs[:, 1]]) ** 2, axis=1)
    vals = np.exp(-d2 / (2.0 * sigma * sigma))
    keep = vals >= SIMILARITY_DROP
    pairs, vals = pairs[keep], vals[keep]
    i = np.concatenate([pairs[:, 0], pairs[:, 1]])
    j = np.concatenate([pairs[:, 1], pairs[:, 0]])
    return sp.csr_matrix((np.concatenate([vals, vals]), (i, j)), shape=(l, l))


def build_group_mst(positions: np.ndarray) -> list[tuple[int, int, float]]:
    """Euclidean minimum spanning tree with deterministic tie-breaks.

    Kruskal over all pairs ordered by (distance, min index, max index);
    returns edges (i, j, length) with i < j, in selection order.
    """
    positions = np.asarray(positions, dtype=np.float64)
    m = len(positions)
    if m < 2:
        return []
    edges = []
    for i in range(m):
        for j in range(i + 1, m):
            edges.append((float(np.linalg.norm(positions[i] - positions[j])),
                          i, j))
    edges.sort()
    parent = list(range(m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree = []
    for dist, i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            tree.append((i, j, dist))
            if len(tree) == m - 1:
                break
    return tree


@dataclass
class GroupModel:
    """Per-group spanning trees with learned rest lengths.

    edges hold (target_a, target_b, rest_length) with global target indices;
    built_frame records when the formation was last refreshed.
    """

    labels: np.ndarray
    edges: list
    refresh_period: int = 10
    built_frame: int = 0

    def members(self, label: int) -> np.ndarray:
        return np.where(self.labels == label)[0]


def build_group_model(positions: np.ndarray, labels: np.ndarray, frame: int,
                      refresh_period: int = 10) -> GroupModel:
    """Spanning tree per coherent group; singleton groups contribute nothing."""
    positions = np.asarray(positions, dtype=np.float64)
    labels = np.asarray(labels)
    edges = []
    for label in np.unique(labels):
        members = np.where(labels == label)[0]
        if members.size < 2:
            continue
        for a, b, dist in build_group_mst(positions[members]):
            edges.append((int(members[a]), int(members[b]), float(dist)))
    return GroupModel(labels.copy(), edges, refresh_period, frame)


def group_similarity(candidate_lists: list, model: GroupModel,
                     sigma: float, frame: int | None = None) -> sp.csr_matrix:
    """Similarity rewarding candidate pairs at the learned formation distance.

    For each tree edge (a, b) with rest length e, candidate pairs across the
    two blocks get exp(-(|p_i - p_j| - e)^2 / (2 sigma^2)), truncated past
    3*sigma of deviation.  Raises when the model is older than its refresh
    period (stale formations must be rebuilt, not reused).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if frame is not None and frame - model.built_frame > model.refresh_period:
        raise ValueError(
            f"group model built at frame {model.built_frame} is stale at "
            f"frame {frame} (refresh period {model.refresh_period})")
    sizes = [len(c) for c in candidate_lists]
    starts = np.concatenate(([0], np.cumsum(sizes)))
    l = int(starts[-1])
    rows, cols, vals = [], [], []
    for a, b, rest in model.edges:
        pa = np.asarray(candidate_lists[a], dtype=np.float64)
        pb = np.asarray(candidate_lists[b], dtype=np.float64)
        if len(pa) == 0 or len(pb) == 0:
            continue
        dist = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
        dev = dist - rest
        mask = np.abs(dev) <= 3.0 * sigma
        ii, jj = np.nonzero(mask)
        if ii.size == 0:
            continue
        v = np.exp(-dev[ii, jj] ** 2 / (2.0 * sigma * sigma))
        keep = v >= SIMILARITY_DROP
        ii, jj, v = ii[keep], jj[keep], v[keep]
        gi = starts[a] + ii
        gj = starts[b] + jj
        rows.extend([gi, gj])
        cols.extend([gj, gi])
        vals.extend([v, v])
    if not rows:
        return sp.csr_matrix((l, l))
    return sp.csr_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(l, l))
