"""Bridge weights, coefficient trains, and off-grid evaluation."""

import numpy as np
import pytest

from ttsurrogate.grid import Feature, FeatureGrid, grid_index_map
from ttsurrogate.interp import (
    bridge_weights,
    coeff_tt,
    coeff_tt_1d,
    interp_eval,
    interp_eval_batch,
)
from ttsurrogate.kernels import LatticeKernelSpec, stn_gpr_mean
from ttsurrogate.tt import TensorTrain, random_tt, tt_eval, tt_to_dense

SINH = np.sinh


class TestBridgeWeights:
    @pytest.mark.parametrize("mode,L", [("linear", None), ("sinh", 0.7)])
    def test_endpoints(self, mode, L):
        w = bridge_weights(0.0, 1.0, 0.0, L, mode=mode)
        assert (w.c0, w.c1) == pytest.approx((1.0, 0.0), abs=1e-15)
        w = bridge_weights(0.0, 1.0, 1.0, L, mode=mode)
        assert (w.c0, w.c1) == pytest.approx((0.0, 1.0), abs=1e-15)

    def test_linear_midpoint(self):
        w = bridge_weights(2.0, 4.0, 3.0, mode="linear")
        assert (w.c0, w.c1) == (0.5, 0.5)

    def test_sinh_quarter_point(self):
        # frozen from sinh(1.5)/sinh(2) and sinh(0.5)/sinh(2)
        w = bridge_weights(0.0, 1.0, 0.25, 0.5, mode="sinh")
        assert w.c0 == pytest.approx(0.5870861339156979, abs=1e-15)
        assert w.c1 == pytest.approx(0.14367669193066093, abs=1e-15)
        assert w.c0 == pytest.approx(SINH(1.5) / SINH(2.0))
        assert w.c1 == pytest.approx(SINH(0.5) / SINH(2.0))

    def test_large_length_scale_limit(self):
        for xq in (0.1, 0.45, 0.99):
            ws = bridge_weights(0.0, 1.0, xq, 1e6, mode="sinh")
            wl = bridge_weights(0.0, 1.0, xq, mode="linear")
            assert ws.c0 == pytest.approx(wl.c0, abs=1e-9)
            assert ws.c1 == pytest.approx(wl.c1, abs=1e-9)

    def test_degenerate_interval(self):
        with pytest.raises(ValueError):
            bridge_weights(1.0, 1.0, 1.0, mode="linear")

    def test_sinh_needs_length_scale(self):
        with pytest.raises(ValueError):
            bridge_weights(0.0, 1.0, 0.5, mode="sinh")


class TestCoeffTT:
    def test_leading_bracket_is_rank_one(self):
        tt = coeff_tt_1d(8, 0, 0.4, 0.6)
        assert tt.ranks == (1, 1, 1, 1)
        dense = tt_to_dense(tt).ravel()
        np.testing.assert_array_equal(dense, [0.4, 0.6, 0, 0, 0, 0, 0, 0])

    def test_center_straddle_is_rank_two(self):
        tt = coeff_tt_1d(8, 3, 0.5, 0.5)
        assert tt.ranks == (1, 2, 2, 1)
        dense = tt_to_dense(tt).ravel()
        np.testing.assert_array_equal(dense, [0, 0, 0, 0.5, 0.5, 0, 0, 0])

    def test_random_bracket_two_nonzeros(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            k0 = int(rng.integers(0, 31))
            c0, c1 = rng.standard_normal(2)
            dense = tt_to_dense(coeff_tt_1d(32, k0, c0, c1)).ravel()
            nz = np.nonzero(dense)[0]
            assert set(nz) <= {k0, k0 + 1}
            assert dense[k0] == c0 and dense[k0 + 1] == c1

    def test_rank_profile_binary_prefix_rule(self):
        for bits in range(1, 7):
            n = 1 << bits
            for k0 in range(n - 1):
                tt = coeff_tt_1d(n, k0, 0.3, 0.9)
                b0 = format(k0, f"0{bits}b")
                b1 = format(k0 + 1, f"0{bits}b")
                crossover = next(p for p in range(bits) if b0[p] != b1[p])
                want = tuple(1 if p <= crossover else 2 for p in range(1, bits)) + (1,)
                assert tt.ranks == (1,) + want

    def test_invalid_inputs(self):
        with pytest.raises(Exception):
            coeff_tt_1d(12, 0, 1.0, 0.0)  # not a power of two
        with pytest.raises(IndexError):
            coeff_tt_1d(8, 7, 1.0, 0.0)  # bracket needs k0 + 1 on the grid


@pytest.fixture
def grid3():
    return FeatureGrid(
        [Feature("a", -1.0, 2.0, 3), Feature("b", 0.0, 5.0, 3), Feature("c", 1.0, 4.0, 3)]
    )


class TestInterpEval:
    def test_grid_point_exact(self, grid3):
        rng = np.random.default_rng(6)
        y = random_tt(grid3.shape, 3, rng)
        bits = rng.integers(0, 2, size=(8, grid3.total_cores))
        pts = grid3.points_of_bits(bits)
        for b, x in zip(bits, pts):
            assert interp_eval(y, grid3, x) == pytest.approx(tt_eval(y, b), abs=1e-11)

    def test_exact_on_multilinear_functions(self, grid3):
        # y(x) = 2 a - 3 b + 0.5 c + 1 evaluated on the lattice
        bits = np.indices(grid3.shape).reshape(grid3.total_cores, -1).T
        pts = grid3.points_of_bits(bits)
        vals = 2 * pts[:, 0] - 3 * pts[:, 1] + 0.5 * pts[:, 2] + 1.0
        from ttsurrogate.tt import tt_from_dense

        y = tt_from_dense(vals.reshape(grid3.shape), eps=1e-13)
        rng = np.random.default_rng(7)
        for x in grid3.random_points(rng, 25):
            want = 2 * x[0] - 3 * x[1] + 0.5 * x[2] + 1.0
            assert interp_eval(y, grid3, x) == pytest.approx(want, abs=1e-9)

    def test_matches_corner_sum(self, grid3):
        rng = np.random.default_rng(8)
        y = random_tt(grid3.shape, 3, rng)
        dense = tt_to_dense(y).reshape(8, 8, 8)
        for x in grid3.random_points(rng, 30):
            k0, th = grid_index_map(grid3, x)
            want = 0.0
            for corner in range(8):
                sel = [(corner >> i) & 1 for i in range(3)]
                w = np.prod([th[i] if sel[i] else 1 - th[i] for i in range(3)])
                want += w * dense[tuple(k0[i] + sel[i] for i in range(3))]
            assert interp_eval(y, grid3, x) == pytest.approx(want, abs=1e-10)

    def test_convex_combination_bounds(self, grid3):
        rng = np.random.default_rng(9)
        y = random_tt(grid3.shape, 2, rng)
        dense = tt_to_dense(y).reshape(8, 8, 8)
        for x in grid3.random_points(rng, 20):
            k0, _ = grid_index_map(grid3, x)
            corners = dense[k0[0]:k0[0] + 2, k0[1]:k0[1] + 2, k0[2]:k0[2] + 2]
            val = interp_eval(y, grid3, x)
            assert corners.min() - 1e-12 <= val <= corners.max() + 1e-12

    def test_sinh_two_point_feature_matches_gp(self):
        grid = FeatureGrid([Feature("x", 0.0, 1.0, 1)])
        y = TensorTrain([np.array([0.7, -1.1]).reshape(1, 2, 1)])
        L = 0.4
        spec = LatticeKernelSpec.from_grid(grid, L)
        for xq in (0.0, 0.2, 0.5, 0.9, 1.0):
            w = bridge_weights(0.0, 1.0, xq, L, mode="sinh")
            want = 0.7 * w.c0 - 1.1 * w.c1
            assert interp_eval(y, grid, [xq], mode="sinh", length_scale=L) == pytest.approx(
                want, abs=1e-13
            )
            assert stn_gpr_mean(y, spec, [xq]) == pytest.approx(want, abs=1e-12)

    def test_sinh_multi_feature_matches_gp_mean(self, grid3):
        rng = np.random.default_rng(10)
        y = random_tt(grid3.shape, 2, rng)
        L = 0.7
        spec = LatticeKernelSpec.from_grid(grid3, L)
        for x in grid3.random_points(rng, 10):
            xn = grid3.normalize(x)[0]
            got = interp_eval(y, grid3, x, mode="sinh", length_scale=L)
            assert got == pytest.approx(stn_gpr_mean(y, spec, xn), abs=1e-9)

    def test_right_edge(self, grid3):
        rng = np.random.default_rng(11)
        y = random_tt(grid3.shape, 2, rng)
        top = np.array([f.hi for f in grid3.features])
        edge_bits = grid3.lattice_to_bits([[7, 7, 7]])[0]
        assert interp_eval(y, grid3, top) == pytest.approx(tt_eval(y, edge_bits), abs=1e-10)

    def test_out_of_range(self, grid3):
        y = random_tt(grid3.shape, 1, np.random.default_rng(0))
        with pytest.raises(ValueError):
            interp_eval(y, grid3, [-2.0, 1.0, 2.0])

    def test_batch_agrees_with_scalar(self, grid3):
        rng = np.random.default_rng(12)
        y = random_tt(grid3.shape, 4, rng)
        xs = grid3.random_points(rng, 50)
        batch = interp_eval_batch(y, grid3, xs)
        single = np.array([interp_eval(y, grid3, x) for x in xs])
        np.testing.assert_allclose(batch, single, atol=1e-11)
        bs = interp_eval_batch(y, grid3, xs, mode="sinh", length_scale=0.5)
        ss = np.array(
            [interp_eval(y, grid3, x, mode="sinh", length_scale=0.5) for x in xs]
        )
        np.testing.assert_allclose(bs, ss, atol=1e-11)

    def test_coeff_tt_kron_structure(self, grid3):
        rng = np.random.default_rng(13)
        x = grid3.random_points(rng, 1)[0]
        full = coeff_tt(grid3, x)
        assert full.d == grid3.total_cores
        assert max(full.ranks) <= 2
