"""Candidate grid generation and extrema-based pruning."""

import numpy as np
import pytest

from crowdtrack.sampling import (
    EXTRA_OFFSETS,
    PruneConfig,
    SearchRegion,
    dense_candidates,
    local_maxima,
    prune_candidates,
)


def brute_local_maxima(points, scores):
    """Independent check: a point is a maximum iff no 8-neighbor beats it."""
    lookup = {(int(x), int(y)): s for (x, y), s in zip(points, scores)}
    out = []
    for i, ((x, y), s) in enumerate(zip(points, scores)):
        ok = True
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                neighbor = lookup.get((int(x) + dx, int(y) + dy))
                if neighbor is not None and neighbor > s:
                    ok = False
        if ok:
            out.append(i)
    return np.array(out)


def gaussian_field(points, center, sigma=3.0):
    d2 = ((points - np.asarray(center)) ** 2).sum(axis=1)
    return np.exp(-d2 / (2 * sigma**2))


class TestSearchRegion:
    def test_half_extent_below_one_rejected(self):
        with pytest.raises(ValueError, match="half_extent"):
            SearchRegion(center=(10.0, 10.0), half_extent=0.5)

    def test_valid_region(self):
        r = SearchRegion(center=(3.0, 4.0), half_extent=6.0)
        assert r.center == (3.0, 4.0)


class TestDenseCandidates:
    def test_interior_counts(self):
        region = SearchRegion(center=(50.0, 50.0), half_extent=2.0)
        assert dense_candidates(region, stride=1).shape == (25, 2)
        assert dense_candidates(region, stride=2).shape == (9, 2)

    def test_row_major_order(self):
        region = SearchRegion(center=(10.0, 20.0), half_extent=1.0)
        pts = dense_candidates(region)
        expected = [
            (9, 19), (10, 19), (11, 19),
            (9, 20), (10, 20), (11, 20),
            (9, 21), (10, 21), (11, 21),
        ]
        assert [tuple(p) for p in pts] == expected

    def test_corner_clipping(self):
        region = SearchRegion(center=(0.0, 0.0), half_extent=2.0)
        pts = dense_candidates(region, frame_size=(100, 100))
        assert pts.shape == (9, 2)
        assert pts.min() >= 0

    def test_far_edge_clipping(self):
        region = SearchRegion(center=(99.0, 50.0), half_extent=2.0)
        pts = dense_candidates(region, frame_size=(100, 100))
        assert pts[:, 0].max() == 99
        assert pts.shape == (15, 2)

    def test_fractional_center(self):
        # sub-pixel centers snap to the nearest pixel, keeping the count fixed
        region = SearchRegion(center=(5.5, 5.5), half_extent=2.0)
        pts = dense_candidates(region)
        assert pts.shape == (25, 2)
        assert pts[:, 0].min() == 4 and pts[:, 0].max() == 8

    def test_fractional_center_rounds_down_below_half(self):
        region = SearchRegion(center=(5.4, 7.6), half_extent=1.0)
        pts = dense_candidates(region)
        assert pts[:, 0].min() == 4 and pts[:, 0].max() == 6
        assert pts[:, 1].min() == 7 and pts[:, 1].max() == 9

    def test_empty_after_clipping_rejected(self):
        region = SearchRegion(center=(-50.0, -50.0), half_extent=2.0)
        with pytest.raises(ValueError, match="no in-bounds"):
            dense_candidates(region, frame_size=(100, 100))

    def test_bad_stride_rejected(self):
        region = SearchRegion(center=(10.0, 10.0), half_extent=2.0)
        with pytest.raises(ValueError, match="stride"):
            dense_candidates(region, stride=0)


class TestLocalMaxima:
    def test_single_peak(self):
        region = SearchRegion(center=(20.0, 20.0), half_extent=5.0)
        pts = dense_candidates(region)
        scores = gaussian_field(pts, (20.0, 20.0))
        idx = local_maxima(pts, scores)
        assert idx.shape == (1,)
        assert tuple(pts[idx[0]]) == (20, 20)

    def test_uniform_plateau_all_maxima(self):
        region = SearchRegion(center=(10.0, 10.0), half_extent=2.0)
        pts = dense_candidates(region)
        idx = local_maxima(pts, np.ones(len(pts)))
        assert idx.shape == (25,)

    def test_matches_bruteforce_on_random_fields(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            region = SearchRegion(center=(30.0, 30.0), half_extent=6.0)
            pts = dense_candidates(region)
            scores = rng.random(len(pts))
            assert np.array_equal(
                local_maxima(pts, scores), brute_local_maxima(pts, scores)
            )

    def test_non_grid_points_rejected(self):
        pts = np.array([(0, 0), (1, 0), (5, 7)])
        with pytest.raises(ValueError, match="grid"):
            local_maxima(pts, np.zeros(3))


class TestPruneConfig:
    def test_m_below_one_rejected(self):
        with pytest.raises(ValueError, match="m must be"):
            PruneConfig(m=0)

    def test_offset_pattern_fixed(self):
        with pytest.raises(ValueError, match="offset pattern"):
            PruneConfig(extra_per_extremum=7)
        assert EXTRA_OFFSETS.shape == (10, 2)
        assert np.abs(EXTRA_OFFSETS).max() <= 2


class TestPruneCandidates:
    def test_single_peak_kept_and_bounded(self):
        region = SearchRegion(center=(20.0, 20.0), half_extent=8.0)
        pts = dense_candidates(region)
        scores = gaussian_field(pts, (20.0, 20.0))
        pruned = prune_candidates(pts, scores)
        assert (20, 20) in {tuple(p) for p in pruned}
        assert len(pruned) <= 33
        # one maximum only, so one group of 1 + 10
        assert len(pruned) == 11

    def test_uniform_ties_break_row_major(self):
        region = SearchRegion(center=(10.0, 10.0), half_extent=2.0)
        pts = dense_candidates(region)
        pruned = prune_candidates(pts, np.ones(len(pts)), PruneConfig(m=3))
        kept = {tuple(p) for p in pruned}
        # lowest row-major indices win ties: the first three grid points
        for expected in [tuple(pts[0]), tuple(pts[1]), tuple(pts[2])]:
            assert expected in kept

    def test_large_grid_reduction(self):
        region = SearchRegion(center=(50.0, 50.0), half_extent=12.0)
        pts = dense_candidates(region)
        assert len(pts) == 625
        rng = np.random.default_rng(3)
        scores = gaussian_field(pts, (47.0, 53.0)) + 0.05 * rng.random(len(pts))
        pruned = prune_candidates(pts, scores)
        assert len(pruned) <= 33
        assert len(pts) / len(pruned) >= 18

    def test_output_near_kept_maxima(self):
        rng = np.random.default_rng(5)
        region = SearchRegion(center=(30.0, 30.0), half_extent=7.0)
        pts = dense_candidates(region)
        scores = rng.random(len(pts))
        cfg = PruneConfig(m=3)
        pruned = prune_candidates(pts, scores, cfg)
        maxima = {tuple(pts[i]) for i in local_maxima(pts, scores)}
        for p in pruned:
            near = any(
                max(abs(p[0] - mx), abs(p[1] - my)) <= 2 for mx, my in maxima
            )
            assert near

    def test_size_bound_random_fields(self):
        rng = np.random.default_rng(9)
        region = SearchRegion(center=(30.0, 30.0), half_extent=6.0)
        pts = dense_candidates(region)
        for m in (1, 2, 3, 5):
            for _ in range(10):
                pruned = prune_candidates(pts, rng.random(len(pts)), PruneConfig(m=m))
                assert len(pruned) <= m * 11

    def test_argmax_survives_when_m_covers_all_maxima(self):
        rng = np.random.default_rng(17)
        region = SearchRegion(center=(30.0, 30.0), half_extent=6.0)
        pts = dense_candidates(region)
        for _ in range(20):
            scores = rng.random(len(pts))
            n_maxima = len(local_maxima(pts, scores))
            pruned = prune_candidates(pts, scores, PruneConfig(m=n_maxima))
            best = tuple(pts[np.argmax(scores)])
            assert best in {tuple(p) for p in pruned}

    def test_nearby_peaks_share_extras_without_duplicates(self):
        region = SearchRegion(center=(20.0, 20.0), half_extent=5.0)
        pts = dense_candidates(region)
        scores = np.zeros(len(pts))
        lookup = {tuple(p): i for i, p in enumerate(map(tuple, pts))}
        scores[lookup[(18, 20)]] = 2.0
        scores[lookup[(22, 20)]] = 1.5
        pruned = prune_candidates(pts, scores, PruneConfig(m=2))
        tuples = [tuple(p) for p in pruned]
        assert len(tuples) == len(set(tuples))
        assert len(tuples) < 22  # the (20, 20) extra overlaps

    def test_misaligned_scores_rejected(self):
        region = SearchRegion(center=(10.0, 10.0), half_extent=2.0)
        pts = dense_candidates(region)
        with pytest.raises(ValueError, match="expected"):
            prune_candidates(pts, np.ones(len(pts) - 1))
