"""Tests for problem assembly, objective/gradient and the Laplacian trick."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdtrack.qp import (Assignment, BlockLayout, LinearCosts, QuadraticTerm,
                           build_problem, gradient, is_feasible, laplacianize,
                           normalize_scores, objective, scores_to_costs,
                           uniform_point)


def random_problem(rng, max_blocks=10, max_size=8, with_quads=True):
    """Random instance with the same structure the tracker produces."""
    n = int(rng.integers(1, max_blocks + 1))
    sizes = rng.integers(1, max_size + 1, size=n)
    layout = BlockLayout(sizes)
    l = layout.n_variables
    lin = LinearCosts(
        appearance=scores_to_costs(layout, rng.random(l)),
        motion=scores_to_costs(layout, rng.random(l)),
        neighbor_motion=scores_to_costs(layout, rng.random(l)),
    )
    quads = []
    if with_quads and l > 1:
        quads = [laplacianize(random_similarity(rng, layout), "repel"),
                 laplacianize(random_similarity(rng, layout), "attract")]
    return build_problem(layout, lin, quads)


def random_similarity(rng, layout, density=0.4):
    """Symmetric similarity in [0,1], zero diagonal and zero within blocks."""
    l = layout.n_variables
    S = np.zeros((l, l))
    mask = rng.random((l, l)) < density
    vals = rng.random((l, l))
    block = layout.block_of
    for i in range(l):
        for j in range(i + 1, l):
            if mask[i, j] and block[i] != block[j]:
                S[i, j] = S[j, i] = vals[i, j]
    return S


def random_feasible(rng, layout):
    x = rng.random(layout.n_variables) + 1e-3
    for j in range(layout.n_blocks):
        sl = layout.block_slice(j)
        x[sl] /= x[sl].sum()
    return x


class TestBlockLayout:
    def test_offsets(self):
        layout = BlockLayout([2, 3, 1])
        assert layout.n_blocks == 3
        assert layout.n_variables == 6
        assert list(layout.starts) == [0, 2, 5, 6]
        assert list(layout.globals_of([1, 2, 0])) == [1, 4, 5]
        assert layout.locate(4) == (1, 2)

    def test_argmin_tie_breaks_low(self):
        layout = BlockLayout([3, 3])
        vals = np.array([2.0, 1.0, 1.0, 5.0, 5.0, 5.0])
        assert list(layout.block_argmin(vals)) == [1, 0]

    def test_uneven_argmax(self):
        layout = BlockLayout([1, 4])
        vals = np.array([0.0, 1.0, 3.0, 3.0, 2.0])
        assert list(layout.block_argmax(vals)) == [0, 1]

    def test_rejects_empty_and_zero_blocks(self):
        with pytest.raises(ValueError):
            BlockLayout([])
        with pytest.raises(ValueError):
            BlockLayout([3, 0])


class TestBuildProblem:
    def test_combined_cost_weights(self):
        layout = BlockLayout([2])
        lin = LinearCosts(np.array([-1.0, 0.0]), np.array([0.0, -1.0]),
                          np.array([-1.0, -1.0]), motion_weight=0.3,
                          neighbor_weight=0.2)
        p = build_problem(layout, lin)
        assert np.allclose(p.combined_cost, [-1.2, -0.5])
        assert p.combined_quadratic is None

    def test_dimension_error_names_vector(self):
        layout = BlockLayout([2, 2])
        lin = LinearCosts(np.zeros(4), np.zeros(3), np.zeros(4))
        with pytest.raises(ValueError, match="motion"):
            build_problem(layout, lin)

    def test_quadratic_shape_error(self):
        layout = BlockLayout([2, 2])
        lin = LinearCosts(np.zeros(4), np.zeros(4), np.zeros(4))
        term = QuadraticTerm(sp.identity(3, format="csr"), "proximity")
        with pytest.raises(ValueError, match="proximity"):
            build_problem(layout, lin, [term])

    def test_negative_weight_rejected(self):
        layout = BlockLayout([2])
        lin = LinearCosts(np.zeros(2), np.zeros(2), np.zeros(2),
                          motion_weight=-0.1)
        with pytest.raises(ValueError):
            build_problem(layout, lin)

    def test_quadratics_sum(self):
        layout = BlockLayout([2])
        lin = LinearCosts(np.zeros(2), np.zeros(2), np.zeros(2))
        a = QuadraticTerm(sp.identity(2, format="csr"), "proximity")
        b = QuadraticTerm(2.0 * sp.identity(2, format="csr"), "grouping")
        p = build_problem(layout, lin, [a, b])
        assert np.allclose(p.combined_quadratic.toarray(), 3.0 * np.eye(2))


class TestObjectiveGradient:
    def test_linear_only(self):
        layout = BlockLayout([2])
        lin = LinearCosts(np.array([-0.5, -1.0]), np.zeros(2), np.zeros(2))
        p = build_problem(layout, lin)
        assert objective(p, [0.0, 1.0]) == pytest.approx(-1.0)
        assert np.allclose(gradient(p, [0.3, 0.7]), [-0.5, -1.0])

    def test_identity_quadratic(self):
        # f = x.I.x with c = 0; x = (1,1) gives 2 and grad 2x
        layout = BlockLayout([2])
        lin = LinearCosts(np.zeros(2), np.zeros(2), np.zeros(2))
        p = build_problem(layout, lin,
                          [QuadraticTerm(sp.identity(2, format="csr"), "proximity")])
        x = np.array([1.0, 1.0])
        assert objective(p, x) == pytest.approx(2.0)
        assert np.allclose(gradient(p, x), 2.0 * x)

    def test_gradient_matches_finite_differences(self):
        # central differences with h = 1e-5 as the independent oracle
        rng = np.random.default_rng(11)
        h = 1e-5
        for _ in range(50):
            p = random_problem(rng)
            x = random_feasible(rng, p.layout)
            g = gradient(p, x)
            fd = np.empty_like(g)
            for i in range(x.size):
                e = np.zeros_like(x)
                e[i] = h
                fd[i] = (objective(p, x + e) - objective(p, x - e)) / (2 * h)
            denom = max(1.0, float(np.abs(g).max()))
            assert np.abs(g - fd).max() / denom < 1e-6

    def test_length_mismatch(self):
        p = random_problem(np.random.default_rng(0), with_quads=False)
        with pytest.raises(ValueError):
            objective(p, np.zeros(p.layout.n_variables + 1))

    def test_convex_along_segments(self):
        # second derivative along any segment is 2 d.Q.d >= 0 (PSD check)
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = random_problem(rng)
            a = random_feasible(rng, p.layout)
            b = random_feasible(rng, p.layout)
            d = b - a
            if p.combined_quadratic is None:
                continue
            curv = float(d @ (p.combined_quadratic @ d))
            assert curv >= -1e-10


class TestLaplacianize:
    def test_zero_similarity_gives_identity(self):
        S = np.zeros((3, 3))
        for mode in ("attract", "repel"):
            term = laplacianize(S, mode)
            assert np.allclose(term.matrix.toarray(), np.eye(3))

    def test_two_node_hand_example(self):
        # S = [[0,1],[1,0]]: degrees 1, S_hat = S
        S = np.array([[0.0, 1.0], [1.0, 0.0]])
        attract = laplacianize(S, "attract").matrix.toarray()
        repel = laplacianize(S, "repel").matrix.toarray()
        assert np.allclose(attract, [[1.0, -1.0], [-1.0, 1.0]])
        assert np.allclose(repel, [[1.0, 1.0], [1.0, 1.0]])

    def test_eigenvalues_nonnegative(self):
        # dense symmetric eigensolver as the oracle
        rng = np.random.default_rng(5)
        for _ in range(25):
            n = int(rng.integers(2, 9))
            S = np.zeros((n, n))
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < 0.6:
                        S[i, j] = S[j, i] = rng.random()
            for mode in ("attract", "repel"):
                m = laplacianize(S, mode).matrix.toarray()
                assert np.allclose(m, m.T)
                assert np.linalg.eigvalsh(m).min() >= -1e-10

    def test_zero_degree_rows_stay_zero(self):
        S = np.zeros((3, 3))
        S[0, 1] = S[1, 0] = 0.5
        term = laplacianize(S, "attract")
        m = term.matrix.toarray()
        # node 2 is isolated: its row is just the identity entry
        assert np.allclose(m[2], [0.0, 0.0, 1.0])

    def test_rejects_asymmetric(self):
        S = np.array([[0.0, 0.5], [0.2, 0.0]])
        with pytest.raises(ValueError, match="symmetric"):
            laplacianize(S, "attract")

    def test_rejects_negative(self):
        S = np.array([[0.0, -0.5], [-0.5, 0.0]])
        with pytest.raises(ValueError, match="non-negative"):
            laplacianize(S, "attract")

    def test_rejects_nonzero_diagonal(self):
        S = np.array([[0.3, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError, match="diagonal"):
            laplacianize(S, "repel")

    def test_rejects_entries_above_one(self):
        S = np.array([[0.0, 1.5], [1.5, 0.0]])
        with pytest.raises(ValueError):
            laplacianize(S, "repel")

    def test_kind_by_mode(self):
        S = np.zeros((2, 2))
        assert laplacianize(S, "repel").kind == "proximity"
        assert laplacianize(S, "attract").kind == "grouping"

    def test_literal_variant_symmetric(self):
        S = np.array([[0.0, 0.8, 0.0],
                      [0.8, 0.0, 0.3],
                      [0.0, 0.3, 0.0]])
        m = laplacianize(S, "literal_attract").matrix.toarray()
        assert np.allclose(m, m.T)
        # differs from the symmetric normalization when degrees differ
        sym = laplacianize(S, "attract").matrix.toarray()
        assert not np.allclose(m, sym)


class TestFeasibility:
    def test_binary_and_fractional(self):
        layout = BlockLayout([2, 3])
        x = Assignment((1, 0)).as_vector(layout)
        assert is_feasible(layout, x)
        assert is_feasible(layout, x, binary=True)
        u = uniform_point(layout)
        assert is_feasible(layout, u)
        assert not is_feasible(layout, u, binary=True)

    def test_violations(self):
        layout = BlockLayout([2, 2])
        assert not is_feasible(layout, np.array([0.5, 0.6, 1.0, 0.0]))
        assert not is_feasible(layout, np.array([-0.1, 1.1, 1.0, 0.0]))
        assert not is_feasible(layout, np.zeros(3))

    def test_binary_norm_equals_block_count(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            sizes = rng.integers(1, 6, size=int(rng.integers(1, 8)))
            layout = BlockLayout(sizes)
            chosen = tuple(int(rng.integers(0, k)) for k in sizes)
            x = Assignment(chosen).as_vector(layout)
            assert float(x @ x) == float(layout.n_blocks)


class TestNormalization:
    def test_unit_range_and_negation(self):
        layout = BlockLayout([3])
        raw = np.array([2.0, 4.0, 3.0])
        norm = normalize_scores(layout, raw)
        assert np.allclose(norm, [0.0, 1.0, 0.5])
        assert np.allclose(scores_to_costs(layout, raw), [0.0, -1.0, -0.5])

    def test_constant_block_maps_to_zero(self):
        layout = BlockLayout([2, 2])
        raw = np.array([5.0, 5.0, 1.0, 2.0])
        norm = normalize_scores(layout, raw)
        assert np.allclose(norm[:2], 0.0)
        assert np.allclose(norm[2:], [0.0, 1.0])

    @given(st.lists(st.integers(min_value=1, max_value=6), min_size=1,
                    max_size=5),
           st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_normalized_scores_in_unit_interval(self, sizes, seed):
        layout = BlockLayout(sizes)
        raw = np.random.default_rng(seed).normal(size=layout.n_variables)
        norm = normalize_scores(layout, raw)
        assert norm.min() >= 0.0 and norm.max() <= 1.0
        costs = scores_to_costs(layout, raw)
        assert costs.max() <= 0.0 and costs.min() >= -1.0

    @given(st.lists(st.integers(min_value=1, max_value=6), min_size=1,
                    max_size=5))
    @settings(max_examples=40, deadline=None)
    def test_uniform_point_feasible(self, sizes):
        layout = BlockLayout(sizes)
        assert is_feasible(layout, uniform_point(layout))
