"""Weight-matrix construction and SAR solve oracles."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import sparse

from transar.spatial import (
    SarSystem,
    SingularSystemError,
    SpatialWeightMatrix,
    build_from_adjacency,
    build_grid_weight,
    load_adjacency_pairs,
    row_normalize,
    sar_solve,
)


def dense(w):
    return w.toarray()


class TestGridWeights:
    def test_two_column_grid_left_right(self):
        # 2x2 row-major grid: units 0-1 and 2-3 are horizontal neighbors.
        w = dense(build_grid_weight(2, 1))
        expected = np.zeros((4, 4))
        expected[0, 1] = expected[1, 0] = 1.0
        expected[2, 3] = expected[3, 2] = 1.0
        assert_allclose(w, expected)
        assert_allclose(w.sum(axis=1), 1.0)

    def test_center_of_row_splits_weight(self):
        w = dense(build_grid_weight(3, 1))
        assert_allclose(w[4, [3, 5]], [0.5, 0.5])
        assert w[4].sum() == 1.0

    def test_order_three_matches_chebyshev_bruteforce(self):
        side = 4
        w = build_grid_weight(side, 3)
        # Brute-force double loop over all pairs at Chebyshev distance 2.
        expected = set()
        for i in range(side * side):
            for j in range(side * side):
                ri, ci = divmod(i, side)
                rj, cj = divmod(j, side)
                if max(abs(ri - rj), abs(ci - cj)) == 2:
                    expected.add((i, j))
        got = set(zip(*w.matrix.nonzero()))
        assert got == expected

    def test_above_below(self):
        w = dense(build_grid_weight(3, 2))
        assert w[0, 3] > 0 and w[0, 1] == 0

    def test_truncated_grid(self):
        w = build_grid_weight(4, 1, n_units=10)
        assert w.n == 10
        assert_allclose(np.asarray(w.matrix.sum(axis=1)).ravel()[:8], 1.0)

    @pytest.mark.parametrize("side,order", [(1, 1), (4, 0), (4, 5), (3, 4)])
    def test_invalid_arguments(self, side, order):
        with pytest.raises(ValueError):
            build_grid_weight(side, order)

    def test_symmetric_pattern_and_zero_diagonal(self):
        for order in (1, 2, 3, 4):
            w = build_grid_weight(5, order)
            m = w.matrix
            assert np.all(m.diagonal() == 0.0)
            assert ((m != 0).toarray() == (m != 0).toarray().T).all()


class TestRowNormalize:
    def test_two_equal_links(self):
        m = sparse.csr_matrix(np.array([[0, 1, 1, 0]] + [[0] * 4] * 3, dtype=float))
        w = row_normalize(SpatialWeightMatrix(m))
        assert_allclose(dense(w)[0], [0, 0.5, 0.5, 0])
        assert w.row_normalized

    def test_zero_row_unchanged(self):
        m = sparse.csr_matrix((3, 3))
        w = row_normalize(SpatialWeightMatrix(m))
        assert_allclose(dense(w), np.zeros((3, 3)))

    def test_proportional_scaling(self):
        m = sparse.csr_matrix(np.array([[0, 2, 0, 6]] + [[0] * 4] * 3, dtype=float))
        w = row_normalize(SpatialWeightMatrix(m))
        assert_allclose(dense(w)[0], [0, 0.25, 0, 0.75])

    def test_negative_weight_rejected(self):
        m = sparse.csr_matrix(np.array([[0.0, -1.0], [0.0, 0.0]]))
        with pytest.raises(ValueError, match="nonnegative"):
            row_normalize(SpatialWeightMatrix(m))


class TestAdjacency:
    def test_single_pair_symmetrized(self):
        w = dense(build_from_adjacency(3, [(0, 1)]))
        assert w[0, 1] == 1.0 and w[1, 0] == 1.0
        assert_allclose(w[2], 0.0)

    def test_reversed_duplicates_collapse(self):
        w1 = build_from_adjacency(2, [(0, 1), (1, 0)])
        w2 = build_from_adjacency(2, [(0, 1)])
        assert_allclose(dense(w1), dense(w2))

    @pytest.mark.parametrize("pairs", [[(0, 0)], [(0, 3)], [(-1, 0)]])
    def test_invalid_pairs(self, pairs):
        with pytest.raises(ValueError):
            build_from_adjacency(3, pairs)

    def test_contiguity_list_row_sums(self):
        # 49-unit contiguity list (7x7 queen pattern); recompute row sums
        # independently of the row_normalized flag.
        pairs = []
        side = 7
        for r in range(side):
            for c in range(side):
                for dr, dc in [(0, 1), (1, 0), (1, 1), (1, -1)]:
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < side and 0 <= cc < side:
                        pairs.append((r * side + c, rr * side + cc))
        w = build_from_adjacency(49, pairs)
        sums = dense(w).sum(axis=1)
        assert_allclose(sums, 1.0, atol=1e-12)

    def test_loader_round_trip(self, tmp_path):
        path = tmp_path / "adj.csv"
        path.write_text("src,dst\n0,1\n2,3\n")
        assert load_adjacency_pairs(path) == [(0, 1), (2, 3)]
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n0,1\n")
        with pytest.raises(ValueError, match="src,dst"):
            load_adjacency_pairs(bad)


class TestWeightMatrixInvariants:
    def test_nonzero_diagonal_rejected(self):
        m = sparse.csr_matrix(np.eye(3))
        with pytest.raises(ValueError, match="diagonal"):
            SpatialWeightMatrix(m)

    def test_nonfinite_rejected(self):
        m = sparse.csr_matrix(np.array([[0.0, np.inf], [0.0, 0.0]]))
        with pytest.raises(ValueError, match="finite"):
            SpatialWeightMatrix(m)

    def test_false_normalization_flag_rejected(self):
        m = sparse.csr_matrix(np.array([[0.0, 2.0], [2.0, 0.0]]))
        with pytest.raises(ValueError, match="row sums"):
            SpatialWeightMatrix(m, row_normalized=True)


class TestSarSolve:
    def test_identity_at_zero_lambda(self):
        w = build_grid_weight(3, 1)
        rhs = np.arange(9.0)
        assert_allclose(sar_solve(SarSystem([0.0], (w,)), rhs), rhs)

    def test_two_by_two_analytic(self):
        m = sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        w = SpatialWeightMatrix(m)
        x = sar_solve(SarSystem([0.5], (w,)), np.array([1.0, 1.0]))
        assert_allclose(x, [2.0, 2.0], atol=1e-12)

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(7)
        n = 20
        raw = rng.random((n, n)) * (rng.random((n, n)) < 0.2)
        np.fill_diagonal(raw, 0.0)
        w = row_normalize(SpatialWeightMatrix(sparse.csr_matrix(raw)))
        system = SarSystem([0.6], (w,))
        rhs = rng.standard_normal(n)
        expected = np.linalg.solve(np.eye(n) - 0.6 * w.toarray(), rhs)
        assert_allclose(sar_solve(system, rhs), expected, atol=1e-8)

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        w1 = build_grid_weight(6, 1)
        w2 = build_grid_weight(6, 3)
        system = SarSystem([0.3, 0.4], (w1, w2))
        v = rng.standard_normal(36)
        s_v = v - 0.3 * w1.lag(v) - 0.4 * w2.lag(v)
        assert_allclose(sar_solve(system, s_v), v, atol=1e-8)

    def test_singular_system_carries_lambda(self):
        m = sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        w = SpatialWeightMatrix(m, row_normalized=True)
        with pytest.raises(SingularSystemError) as err:
            sar_solve(SarSystem([1.0], (w,)), np.ones(2))
        assert_allclose(err.value.lam, [1.0])

    def test_diagonally_dominant_region_always_solves(self):
        rng = np.random.default_rng(11)
        w = build_grid_weight(5, 1)
        for _ in range(10):
            lam = rng.uniform(-0.99, 0.99)
            sar_solve(SarSystem([lam], (w,)), rng.standard_normal(25))

    def test_nonfinite_rhs_rejected(self):
        w = build_grid_weight(3, 1)
        with pytest.raises(ValueError, match="finite"):
            sar_solve(SarSystem([0.1], (w,)), np.array([np.nan] * 9))
