"""Tests for the FK/PK convolution lowerings against a direct convolution oracle."""

import numpy as np
import pytest

from shiftadd.convlower import (
    conv_addition_cost,
    conv_forward,
    conv_group_matrix,
    fk_matrices,
    lower_conv,
    pk_matrices,
)
from shiftadd.pruning import GroupStructure


def direct_convolution(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Six-loop valid cross-correlation; the independent reference."""
    N, K, O, _ = kernels.shape
    _, Z, _ = x.shape
    P = Z - O + 1
    y = np.zeros((N, P, P))
    for n in range(N):
        for k in range(K):
            for r in range(P):
                for c in range(P):
                    acc = 0.0
                    for u in range(O):
                        for v in range(O):
                            acc += kernels[n, k, u, v] * x[k, r + u, c + v]
                    y[n, r, c] += acc
    return y


class TestMatrices:
    def test_fk_scalar_kernels(self):
        kernels = np.arange(6, dtype=float).reshape(3, 2, 1, 1)
        mats = fk_matrices(kernels)
        assert [m.shape for m in mats] == [(3, 1), (3, 1)]
        np.testing.assert_array_equal(mats[0][:, 0], kernels[:, 0, 0, 0])

    def test_fk_flattening(self):
        kernels = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])  # N=1, K=1, O=2
        np.testing.assert_array_equal(fk_matrices(kernels)[0], [[1.0, 2.0, 3.0, 4.0]])

    def test_pk_scalar_kernels_match_fk(self):
        rng = np.random.default_rng(0)
        kernels = rng.normal(size=(4, 3, 1, 1))
        for a, b in zip(fk_matrices(kernels), pk_matrices(kernels)):
            np.testing.assert_array_equal(a, b)

    def test_pk_rows_are_kernel_columns(self):
        kernels = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        mat = pk_matrices(kernels)[0]
        np.testing.assert_array_equal(mat, [[1.0, 3.0], [2.0, 4.0]])


class TestForward:
    def test_delta_kernel_crops_input(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 6, 6))
        kernels = np.zeros((1, 1, 3, 3))
        kernels[0, 0, 1, 1] = 1.0
        for method in ("fk", "pk"):
            low = lower_conv(kernels, method, image=6)
            np.testing.assert_allclose(conv_forward(x, low), x[:, 1:5, 1:5], atol=1e-15)

    def test_zero_kernels(self):
        low = lower_conv(np.zeros((2, 3, 2, 2)), "fk", image=5)
        np.testing.assert_array_equal(conv_forward(np.ones((3, 5, 5)), low), np.zeros((2, 4, 4)))

    @pytest.mark.parametrize("method", ["fk", "pk"])
    def test_matches_direct_convolution(self, method):
        rng = np.random.default_rng(2)
        for _ in range(12):
            O = int(rng.choice([1, 2, 3, 5]))
            Z = int(rng.integers(O, 12))
            K = int(rng.integers(1, 5))
            N = int(rng.integers(1, 5))
            kernels = rng.normal(size=(N, K, O, O))
            x = rng.normal(size=(K, Z, Z))
            got = conv_forward(x, lower_conv(kernels, method, image=Z))
            want = direct_convolution(x, kernels)
            np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-12)

    def test_shape_mismatch(self):
        low = lower_conv(np.zeros((1, 1, 2, 2)), "fk", image=4)
        with pytest.raises(ValueError):
            conv_forward(np.zeros((2, 4, 4)), low)


class TestGroupMatrix:
    def test_single_map_is_identity_stack(self):
        rng = np.random.default_rng(3)
        kernels = rng.normal(size=(3, 1, 2, 2))
        low = lower_conv(kernels, "fk", image=4)
        np.testing.assert_array_equal(conv_group_matrix(low), low.matrices[0])

    def test_fk_stack_shape(self):
        low = lower_conv(np.zeros((2, 3, 3, 3)), "fk", image=6)
        assert conv_group_matrix(low).shape == (6, 9)

    def test_zeroing_group_zeroes_kernel(self):
        rng = np.random.default_rng(4)
        kernels = rng.normal(size=(2, 2, 3, 3))
        gs = GroupStructure("conv_fk", kernels.shape)
        Wt = gs.to_groups(kernels)
        Wt[3] = 0.0  # group 3 = (k=1, n=1) under the stacking order
        back = gs.from_groups(Wt)
        np.testing.assert_array_equal(back[1, 1], np.zeros((3, 3)))
        # forward with the zeroed kernel equals direct conv with it zeroed
        x = rng.normal(size=(2, 5, 5))
        got = conv_forward(x, lower_conv(back, "fk", image=5))
        np.testing.assert_allclose(got, direct_convolution(x, back), atol=1e-12)

    def test_pk_zeroing_kills_kernel_column(self):
        rng = np.random.default_rng(5)
        kernels = rng.normal(size=(1, 1, 3, 3))
        gs = GroupStructure("conv_pk", kernels.shape)
        Wt = gs.to_groups(kernels)
        Wt[1] = 0.0  # column 1 of the single kernel
        back = gs.from_groups(Wt)
        np.testing.assert_array_equal(back[0, 0][:, 1], np.zeros(3))


def recount_additions(lowered, per_matrix_adds) -> int:
    """Independent tally: walk positions and output elements explicitly."""
    spec = lowered.spec
    K, N, O, P, Z = spec.in_maps, spec.out_maps, spec.kernel, spec.out_size, spec.image
    total = 0
    if lowered.method == "fk":
        for _r in range(P):
            for _c in range(P):
                for k in range(K):
                    total += per_matrix_adds[k]
        for _n in range(N):
            for _r in range(P):
                for _c in range(P):
                    total += K - 1
        return total
    for k in range(K):
        for _r in range(P):
            for _c in range(Z):
                total += per_matrix_adds[k]
    for _n in range(N):
        for _r in range(P):
            for _c in range(P):
                total += (O - 1) + (K - 1)
    return total


class TestAdditionCost:
    def test_single_scalar_weight_is_free(self):
        low = lower_conv(np.full((1, 1, 1, 1), 2.0), "fk", image=3)
        assert conv_addition_cost(low, [0]) == 0

    @pytest.mark.parametrize("method", ["fk", "pk"])
    def test_formula_matches_recount(self, method):
        rng = np.random.default_rng(6)
        kernels = rng.normal(size=(3, 2, 3, 3))
        low = lower_conv(kernels, method, image=7)
        costs = [4, 9]
        assert conv_addition_cost(low, costs) == recount_additions(low, costs)

    def test_pk_matrices_are_taller(self):
        kernels = np.zeros((4, 2, 3, 3))
        fk = fk_matrices(kernels)
        pk = pk_matrices(kernels)
        for a, b in zip(fk, pk):
            # rows per column: fk N/O^2 vs pk N; strictly taller for O > 1
            assert b.shape[0] / b.shape[1] > a.shape[0] / a.shape[1]
