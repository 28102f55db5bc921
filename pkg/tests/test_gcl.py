import numpy as np
import pytest

from cann import tensor as T
from cann.attention import coherence_logits
from cann.errors import ContractError, ShapeError
from cann.gcl import (
    GclConfig,
    coherence_scores,
    gcl_block,
    gcl_forward,
    gcl_forward_batch,
    init_gcl_params,
    reduce_visual,
    _stack_padded,
)
from cann.tensor import Tensor

from conftest import fd_gradient_check

SMALL = GclConfig(d_c=10, d_f=16, S=2, b_star=2, k=4)


@pytest.fixture
def small_params():
    return init_gcl_params(SMALL, np.random.default_rng(0))


class TestReduceVisual:
    def test_zero_input_zero_biases(self, small_params):
        p = small_params
        p.b_f1.data[:] = 0
        p.b_f2.data[:] = 0
        out = reduce_visual(Tensor(np.zeros(SMALL.d_c)), p)
        np.testing.assert_array_equal(out.data, np.zeros(SMALL.d_f))

    def test_identity_case(self):
        cfg = GclConfig(d_c=6, d_f=6, S=2, b_star=1, k=2)
        p = init_gcl_params(cfg, np.random.default_rng(0))
        p.W_f1.data = np.eye(6)
        p.W_f2.data = np.eye(6)
        p.b_f1.data[:] = 0
        p.b_f2.data[:] = 0
        x = np.array([0.5, 1.0, 0.0, 2.0, 3.0, 0.25])
        np.testing.assert_allclose(reduce_visual(Tensor(x), p).data, x)

    def test_default_output_dim_is_512(self):
        cfg = GclConfig()
        p = init_gcl_params(cfg, np.random.default_rng(0))
        out = reduce_visual(Tensor(np.ones(cfg.d_c)), p)
        assert out.shape == (512,)

    def test_dim_mismatch(self, small_params):
        with pytest.raises(ShapeError):
            reduce_visual(Tensor(np.zeros(7)), small_params)

    def test_gradient(self, small_params):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(3, SMALL.d_c)), requires_grad=True)
        tensors = {"x": x, "W_f1": small_params.W_f1, "b_f2": small_params.b_f2}
        fd_gradient_check(lambda: reduce_visual(x, small_params).sum(), tensors, rng)


class TestCoherenceScores:
    def test_identical_rows_uniform(self, small_params):
        head = small_params.blocks[0].heads[0]
        X = Tensor(np.tile(np.random.default_rng(2).normal(size=SMALL.d_s), (4, 1)))
        scores = coherence_scores(X, head).data
        np.testing.assert_allclose(scores, 0.25, atol=1e-12)

    def test_rows_sum_to_one(self, small_params):
        head = small_params.blocks[0].heads[0]
        X = Tensor(np.random.default_rng(3).normal(size=(5, SMALL.d_s)))
        scores = coherence_scores(X, head).data
        np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-9)

    def test_doubling_wq_doubles_logits(self, small_params):
        head = small_params.blocks[0].heads[0]
        X = Tensor(np.random.default_rng(4).normal(size=(4, SMALL.d_s)))
        base = coherence_logits(X, head).data
        head.W_q.data = head.W_q.data * 2.0
        np.testing.assert_allclose(coherence_logits(X, head).data, 2.0 * base, rtol=1e-12)


class TestGclBlock:
    def test_shape_preserved(self, small_params):
        H = Tensor(np.random.default_rng(5).normal(size=(SMALL.k, SMALL.d_f)))
        out = gcl_block(H, small_params.blocks[0], mode="train")
        assert out.shape == (SMALL.k, SMALL.d_f)

    def test_zero_value_projection_gives_residual_identity(self, small_params):
        block = small_params.blocks[0]
        for head in block.heads:
            head.W_v.data[:] = 0.0
            head.b_v.data[:] = 0.0
        H = Tensor(np.random.default_rng(6).normal(size=(SMALL.k, SMALL.d_f)))
        out = gcl_block(H, block, mode="train").data
        # with a zeroed attention term the block reduces to its H-only path
        hidden = np.maximum(H.data @ block.W_n1.data + block.b_n1.data, 0.0)
        f_n = hidden @ block.W_n2.data + block.b_n2.data
        proj = f_n @ block.W_bn.data + block.b_bn.data
        mu, var = proj.mean(axis=0), proj.var(axis=0)
        expected = (proj - mu) / np.sqrt(var + block.bn.epsilon)
        np.testing.assert_allclose(out, expected, atol=1e-9)

    def test_gradient(self, small_params):
        rng = np.random.default_rng(7)
        block = small_params.blocks[0]
        H = Tensor(rng.normal(size=(SMALL.k, SMALL.d_f)), requires_grad=True)
        tensors = {
            "H": H,
            "W_v": block.heads[0].W_v,
            "W_q": block.heads[1].W_q,
            "W_n1": block.W_n1,
            "W_bn": block.W_bn,
            "gamma": block.bn.gamma,
            "beta": block.bn.beta,
        }
        fd_gradient_check(lambda: T.mul(gcl_block(H, block, mode="train"), 0.3).sum(), tensors, rng)


class TestGclForward:
    def test_full_length_collection_gets_no_padding(self, small_params):
        rng = np.random.default_rng(8)
        items = [rng.normal(size=SMALL.d_c) for _ in range(SMALL.k)]
        small_params.padding.data[:] = 1e6  # would dominate if ever applied
        stacked = _stack_padded([items], small_params, SMALL).data
        np.testing.assert_allclose(stacked, np.stack(items))

    def test_short_collection_left_padded(self, small_params):
        cfg = GclConfig(d_c=10, d_f=16, S=2, b_star=1, k=8)
        p = init_gcl_params(cfg, np.random.default_rng(9))
        p.padding.data[:] = 7.0
        rng = np.random.default_rng(10)
        items = [rng.normal(size=cfg.d_c) for _ in range(5)]
        stacked = _stack_padded([items], p, cfg).data
        np.testing.assert_allclose(stacked[:3], 7.0)
        np.testing.assert_allclose(stacked[3:], np.stack(items))

    def test_length_bounds(self, small_params):
        with pytest.raises(ContractError):
            gcl_forward([], small_params, SMALL)
        rng = np.random.default_rng(11)
        too_many = [rng.normal(size=SMALL.d_c) for _ in range(SMALL.k + 1)]
        with pytest.raises(ContractError):
            gcl_forward(too_many, small_params, SMALL)

    def test_eval_mode_is_bitwise_deterministic(self, small_params):
        rng = np.random.default_rng(12)
        items = [rng.normal(size=SMALL.d_c) for _ in range(3)]
        a = gcl_forward(items, small_params, SMALL, mode="eval").data
        b = gcl_forward(items, small_params, SMALL, mode="eval").data
        assert np.array_equal(a, b)

    def test_permutation_equivariance(self, small_params):
        rng = np.random.default_rng(13)
        items = [rng.normal(size=SMALL.d_c) for _ in range(SMALL.k)]
        perm = [2, 0, 3, 1]
        base = gcl_forward(items, small_params, SMALL, mode="eval").data
        permuted = gcl_forward([items[i] for i in perm], small_params, SMALL, mode="eval").data
        np.testing.assert_allclose(permuted, base[perm], atol=1e-9)

    def test_attention_rows_stochastic(self, small_params):
        rng = np.random.default_rng(14)
        items = [rng.normal(size=SMALL.d_c) for _ in range(3)]
        attn: dict = {}
        gcl_forward(items, small_params, SMALL, mode="eval", attn_out=attn)
        assert set(attn) == {"block0", "block1"}
        for per_block in attn.values():
            for matrices in per_block:
                assert len(matrices) == SMALL.S
                for A in matrices:
                    assert A.shape == (SMALL.k, SMALL.k)
                    assert (A >= 0).all()
                    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-9)

    def test_batch_rows_match_collections(self, small_params):
        rng = np.random.default_rng(15)
        colls = [[rng.normal(size=SMALL.d_c) for _ in range(3)] for _ in range(2)]
        out = gcl_forward_batch(colls, small_params, SMALL, mode="eval")
        assert out.shape == (2 * SMALL.k, SMALL.d_f)
