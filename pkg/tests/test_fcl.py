import numpy as np
import pytest

from cann import tensor as T
from cann.errors import ShapeError
from cann.fcl import (
    SLOTS,
    FclConfig,
    across_item_attention,
    fcl_forward,
    init_fcl_params,
    item_summaries,
    pad_region_features,
    reduce_region_features,
    within_item_attention,
)
from cann.tensor import Tensor

from conftest import fd_gradient_check

CFG = FclConfig(d_c=6, d_y=8, S_f=2, k=3)
K = 3


@pytest.fixture
def params():
    return init_fcl_params(CFG, np.random.default_rng(0))


def random_raw(rng, k=K):
    return rng.normal(size=(k, 3, 3, CFG.d_c))


class TestReduceRegionFeatures:
    def test_zero_input_zero_bias(self, params):
        params.b_r.data[:] = 0
        out = reduce_region_features(np.zeros((K, 3, 3, CFG.d_c)), params, CFG)
        np.testing.assert_array_equal(out.data, np.zeros((K * SLOTS, CFG.d_y)))

    def test_output_shape(self, params):
        out = reduce_region_features(random_raw(np.random.default_rng(1)), params, CFG)
        assert out.shape == (K * SLOTS, CFG.d_y)

    def test_shape_error(self, params):
        with pytest.raises(ShapeError):
            reduce_region_features(np.zeros((K, 3, 2, CFG.d_c)), params, CFG)

    def test_gradient(self, params):
        rng = np.random.default_rng(2)
        raw = random_raw(rng)
        tensors = {"W_r": params.W_r, "b_r": params.b_r}
        fd_gradient_check(lambda: reduce_region_features(raw, params, CFG).sum(), tensors, rng)


class TestWithinItemAttention:
    def test_identical_slots_uniform(self, params):
        rng = np.random.default_rng(3)
        row = rng.normal(size=CFG.d_y)
        V = Tensor(np.tile(row, (K * SLOTS, 1)))
        attn: list = []
        within_item_attention(V, params, K, attn_out=attn)
        for matrices in attn:
            for A in matrices:
                np.testing.assert_allclose(A, 1.0 / SLOTS, atol=1e-12)

    def test_items_independent(self, params):
        rng = np.random.default_rng(4)
        V = rng.normal(size=(K * SLOTS, CFG.d_y))
        base = within_item_attention(Tensor(V), params, K).data
        V2 = V.copy()
        V2[2 * SLOTS :] += 5.0  # perturb item 2 only
        out = within_item_attention(Tensor(V2), params, K).data
        np.testing.assert_array_equal(out[: 2 * SLOTS], base[: 2 * SLOTS])

    def test_rows_stochastic(self, params):
        rng = np.random.default_rng(5)
        V = Tensor(rng.normal(size=(K * SLOTS, CFG.d_y)))
        attn: list = []
        within_item_attention(V, params, K, attn_out=attn)
        assert len(attn) == K
        for matrices in attn:
            for A in matrices:
                assert A.shape == (SLOTS, SLOTS)
                np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-9)


class TestAcrossItemAttention:
    def test_identical_items_uniform(self, params):
        rng = np.random.default_rng(6)
        block = rng.normal(size=(SLOTS, CFG.d_y))
        V = Tensor(np.tile(block, (K, 1)))
        attn: list = []
        across_item_attention(V, params, K, attn_out=attn)
        for A in attn[0]:
            np.testing.assert_allclose(A, 1.0 / K, atol=1e-12)

    def test_output_shape(self, params):
        rng = np.random.default_rng(7)
        V = Tensor(rng.normal(size=(K * SLOTS, CFG.d_y)))
        assert across_item_attention(V, params, K).shape == (K, CFG.d_y)


class TestFclForward:
    def test_padding_items_use_zero_features(self, params):
        rng = np.random.default_rng(8)
        feats = [rng.normal(size=(3, 3, CFG.d_c)) for _ in range(2)]
        padded = pad_region_features(feats, CFG, K)
        np.testing.assert_array_equal(padded[0], 0.0)
        np.testing.assert_allclose(padded[1:], np.stack(feats))

    def test_deterministic(self, params):
        raw = random_raw(np.random.default_rng(9))
        a = fcl_forward(raw, params, CFG).data
        b = fcl_forward(raw, params, CFG).data
        assert np.array_equal(a, b)

    def test_permutation_equivariance(self, params):
        raw = random_raw(np.random.default_rng(10))
        swapped = raw[[1, 0, 2]]
        base = fcl_forward(raw, params, CFG).data
        out = fcl_forward(swapped, params, CFG).data
        np.testing.assert_allclose(out, base[[1, 0, 2]], atol=1e-9)

    def test_hierarchical_locality_with_identity_across_stage(self, params):
        # freezing the across-item stage to the identity isolates the
        # within-item stage: perturbing item 0 must not touch item 2's summary
        rng = np.random.default_rng(11)
        raw = random_raw(rng)
        V = reduce_region_features(raw, params, CFG)
        base = item_summaries(within_item_attention(V, params, K), K).data
        raw2 = raw.copy()
        raw2[0, 1, 2] += 1.0
        V2 = reduce_region_features(raw2, params, CFG)
        out = item_summaries(within_item_attention(V2, params, K), K).data
        np.testing.assert_array_equal(out[1:], base[1:])
        assert not np.allclose(out[0], base[0])

    def test_gradient(self, params):
        rng = np.random.default_rng(12)
        raw = random_raw(rng)
        tensors = {
            "W_r": params.W_r,
            "within.W_v": params.within_heads[0].W_v,
            "within.W_k": params.within_heads[1].W_k,
            "across.W_q": params.across_heads[0].W_q,
            "across.b_v": params.across_heads[1].b_v,
        }
        fd_gradient_check(lambda: T.mul(fcl_forward(raw, params, CFG), 0.5).sum(), tensors, rng)

    def test_attention_export_rows_stochastic(self, params):
        raw = random_raw(np.random.default_rng(13))
        attn: dict = {}
        fcl_forward(raw, params, CFG, attn_out=attn)
        for matrices in attn["within"]:
            for A in matrices:
                np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-9)
        for A in attn["across"][0]:
            assert A.shape == (K, K)
            np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-9)
