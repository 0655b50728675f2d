import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import finite_difference_check, random_instance
from divnet.model import (
    DivNetParams,
    ModelConfig,
    RankingInstance,
    build_input,
    decode_candidate,
    decode_candidate_naive,
    decode_slate,
    decode_step,
    diversity_det,
    encode,
    export_attention,
    positional_encoding,
    selection_probabilities,
)
from divnet.tensor import Tensor


class TestPositionalEncoding:
    def test_position_zero(self):
        z = positional_encoding(1, 6)
        assert np.array_equal(z[0, 0::2], np.zeros(3))   # sin 0
        assert np.array_equal(z[0, 1::2], np.ones(3))    # cos 0

    def test_direct_evaluation(self):
        z = positional_encoding(2, 4)
        expected = [math.sin(1.0), math.cos(1.0),
                    math.sin(1 / 10000 ** 0.5), math.cos(1 / 10000 ** 0.5)]
        assert np.allclose(z[1], expected, atol=1e-6)
        assert np.allclose(z[1], [0.841471, 0.540302, 0.0099998, 0.99995],
                           atol=1e-5)

    def test_rows_distinct(self):
        z = positional_encoding(200, 8)
        for i in range(0, 200, 17):
            for j in range(i + 1, 200, 23):
                assert not np.allclose(z[i], z[j], atol=1e-9)

    def test_bad_width(self):
        with pytest.raises(ValueError):
            positional_encoding(3, 0)


class TestBuildInput:
    def test_zero_position_embedding_is_pure_concat(self):
        cfg = ModelConfig(item_dim=2, user_dim=1, d_k=4, d_v=4)
        params = DivNetParams.init(cfg, seed=0)
        inst = RankingInstance("q", [[1.0, 2.0], [3.0, 4.0]], [5.0],
                               [0, 0], [0, 0])
        x = build_input(inst, params, z=np.zeros((2, 3)))
        assert np.array_equal(x.data, [[1, 2, 5], [3, 4, 5]])

    def test_hand_arithmetic(self):
        cfg = ModelConfig(item_dim=2, user_dim=1, d_k=4, d_v=4)
        params = DivNetParams.init(cfg, seed=0)
        inst = RankingInstance("q", [[1.0, 2.0]], [3.0], [0], [0])
        x = build_input(inst, params, z=np.array([[0.1, 0.2, 0.3]]))
        assert np.allclose(x.data, [[1.1, 2.2, 3.3]])

    def test_user_vector_broadcast(self):
        cfg = ModelConfig(item_dim=2, user_dim=2, d_k=4, d_v=4)
        params = DivNetParams.init(cfg, seed=0)
        rng = np.random.default_rng(0)
        inst = RankingInstance("q", rng.normal(size=(5, 2)), [7.0, -1.0],
                               np.zeros(5, int), np.zeros(5, int))
        z = positional_encoding(5, 4)
        x = build_input(inst, params, z=z)
        user_block = x.data[:, 2:] - z[:, 2:]
        assert np.allclose(user_block, np.tile([7.0, -1.0], (5, 1)))

    def test_width_mismatch_rejected(self):
        cfg = ModelConfig(item_dim=2, user_dim=1, d_k=4, d_v=4)
        params = DivNetParams.init(cfg, seed=0)
        inst = RankingInstance("q", [[1.0, 2.0]], [3.0], [0], [0])
        with pytest.raises(ValueError):
            build_input(inst, params, z=np.zeros((1, 5)))


class TestEncode:
    def test_single_row_attention_is_identity_weight(self, tiny_params):
        from divnet.tensor import layer_norm
        x = Tensor(np.random.default_rng(0).normal(size=(1, 6)))
        h = encode(x, tiny_params)
        blk = tiny_params.encoder[0]
        q = x @ blk.w_q
        v = x @ blk.w_v
        expected = layer_norm(v @ blk.w_o + q, blk.ln_gain, blk.ln_bias)
        assert np.allclose(h.data, expected.data, atol=1e-12)

    def test_permutation_equivariance(self, tiny_params):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5, 6))
        perm = rng.permutation(5)
        h1 = encode(Tensor(x), tiny_params).data
        h2 = encode(Tensor(x[perm]), tiny_params).data
        assert np.allclose(h2, h1[perm], atol=1e-10)

    def test_gradient_through_encode(self, tiny_params):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
        tiny_params.set_requires_grad(True)
        blk = tiny_params.encoder[0]
        w = Tensor(rng.normal(size=(3, 4)))
        finite_difference_check(
            lambda: (encode(x, tiny_params) * w).sum(),
            [x, blk.w_q, blk.w_k, blk.w_v, blk.w_o, blk.ln_gain, blk.ln_bias])

    def test_multi_block_shapes(self):
        cfg = ModelConfig(item_dim=3, user_dim=0, d_k=5, d_v=4, num_blocks=2)
        params = DivNetParams.init(cfg, seed=3)
        x = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
        assert encode(x, params).shape == (4, 5)


class TestDecodeStep:
    def test_empty_prefix_attention_weight_one(self, tiny_params, tiny_instance):
        d = decode_slate(tiny_instance, tiny_params, num_steps=1)
        assert d.attention_weights[0].shape == (1,)
        assert d.attention_weights[0][0] == pytest.approx(1.0)

    def test_cache_equals_naive_recomputation(self, tiny_params, tiny_instance):
        d = decode_slate(tiny_instance, tiny_params, mode="greedy")
        h_e = encode(build_input(tiny_instance, tiny_params), tiny_params)
        selected = []
        remaining = list(range(tiny_instance.num_items))
        from divnet.model import DecoderCache
        cache = DecoderCache()
        for t, chosen in enumerate(d.permutation):
            for c in remaining:
                h_bar_c, y_c, *_ = decode_candidate(cache, h_e.row(c), tiny_params)
                h_bar_n, y_n = decode_candidate_naive(selected, h_e.row(c),
                                                      tiny_params)
                assert np.array_equal(h_bar_c.data, h_bar_n.data)
                assert float(y_c.data) == float(y_n.data)
            h_bar, y, k, v, _ = decode_candidate(cache, h_e.row(chosen), tiny_params)
            cache.append(k, v, h_bar)
            selected.append(h_e.row(chosen))
            remaining.remove(chosen)

    def test_logit_in_unit_interval(self, tiny_params, tiny_instance):
        d = decode_slate(tiny_instance, tiny_params)
        for y in d.step_logits:
            assert 0.0 < float(y.data) < 1.0

    def test_rejects_selected_candidate(self, tiny_params, tiny_instance):
        d = decode_slate(tiny_instance, tiny_params, num_steps=2)
        h_e = encode(build_input(tiny_instance, tiny_params), tiny_params)
        with pytest.raises(ValueError, match="already selected"):
            decode_step(d, d.permutation[0], h_e, tiny_params)


class TestDiversityDet:
    def test_first_selection_is_one(self):
        out = diversity_det([], [], Tensor([[1.0, 2.0]]))
        assert float(out.data) == 1.0

    def test_duplicate_direction_gives_zero(self):
        a = Tensor([[1.0, 1.0]])
        kernel = [[Tensor(1.0)]]
        out = diversity_det(kernel, [a], Tensor([[2.0, 2.0]]))
        assert float(out.data) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_pair_gives_one(self):
        a = Tensor([[1.0, 0.0]])
        kernel = [[Tensor(1.0)]]
        out = diversity_det(kernel, [a], Tensor([[0.0, 5.0]]))
        assert float(out.data) == pytest.approx(1.0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(1, 4))
        b = rng.normal(size=(1, 4))
        c = rng.normal(size=(1, 4))
        kernel = [[Tensor(1.0)],
                  [__import__("divnet.tensor", fromlist=["cosine_rows"]).cosine_rows(
                      Tensor(b), Tensor(a)), Tensor(1.0)]]
        d1 = diversity_det(kernel, [Tensor(a), Tensor(b)], Tensor(c))
        d2 = diversity_det(kernel, [Tensor(a), Tensor(b)], Tensor(3.7 * c))
        assert float(d1.data) == pytest.approx(float(d2.data), rel=1e-9)


class TestSelectionProbabilities:
    def test_symmetric(self):
        probs = selection_probabilities([Tensor(0.5), Tensor(0.5)],
                                        [Tensor(1.0), Tensor(1.0)], alpha=0.0)
        assert [float(p.data) for p in probs] == [0.5, 0.5]

    def test_direct_arithmetic(self):
        probs = selection_probabilities([Tensor(0.6), Tensor(0.2)],
                                        [Tensor(0.5), Tensor(0.9)], alpha=1.0)
        assert [float(p.data) for p in probs] == pytest.approx([0.5, 0.5])

    def test_monotone_in_det(self):
        base = selection_probabilities([Tensor(0.5), Tensor(0.5)],
                                       [Tensor(0.3), Tensor(0.3)], alpha=1.0)
        bumped = selection_probabilities([Tensor(0.5), Tensor(0.5)],
                                         [Tensor(0.6), Tensor(0.3)], alpha=1.0)
        assert float(bumped[0].data) > float(base[0].data)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            selection_probabilities([], [], alpha=0.1)

    def test_sums_to_one(self):
        rng = np.random.default_rng(5)
        logits = [Tensor(v) for v in rng.uniform(0.01, 1, size=7)]
        dets = [Tensor(v) for v in rng.uniform(0, 1, size=7)]
        probs = selection_probabilities(logits, dets, alpha=0.4)
        assert sum(float(p.data) for p in probs) == pytest.approx(1.0, abs=1e-12)


class TestDecodeSlate:
    def test_single_item(self, tiny_params):
        inst = RankingInstance("q", [[1.0, 0.0, 0.0, 0.0]], [0.0, 0.0], [3], [1])
        d = decode_slate(inst, tiny_params)
        assert d.permutation == [0]
        assert float(d.step_probabilities[0][0].data) == pytest.approx(1.0)

    def test_greedy_deterministic(self, tiny_params, tiny_instance):
        a = decode_slate(tiny_instance, tiny_params, mode="greedy", seed=1)
        b = decode_slate(tiny_instance, tiny_params, mode="greedy", seed=999)
        assert a.permutation == b.permutation

    def test_sample_reproducible(self, tiny_params, tiny_instance):
        a = decode_slate(tiny_instance, tiny_params, mode="sample", seed=7)
        b = decode_slate(tiny_instance, tiny_params, mode="sample", seed=7)
        assert a.permutation == b.permutation
        assert float(a.log_prob.data) == float(b.log_prob.data)

    def test_alpha_zero_greedy_picks_max_logit_first(self, tiny_params,
                                                     tiny_instance):
        d = decode_slate(tiny_instance, tiny_params, alpha=0.0, num_steps=1)
        first = d.permutation[0]
        ys = {c: float(p.data) for c, p in d.step_probabilities[0].items()}
        assert ys[first] == max(ys.values())

    def test_step_probabilities_sum_to_one(self, tiny_params):
        rng = np.random.default_rng(6)
        inst = random_instance(rng, n=6)
        d = decode_slate(inst, tiny_params, alpha=0.3)
        for probs in d.step_probabilities:
            assert sum(float(p.data) for p in probs.values()) == pytest.approx(
                1.0, abs=1e-9)

    def test_dets_in_unit_interval(self, tiny_params):
        rng = np.random.default_rng(7)
        inst = random_instance(rng, n=7)
        d = decode_slate(inst, tiny_params, alpha=0.5)
        for det in d.step_determinants:
            assert 0.0 <= float(det.data) <= 1.0

    def test_duplicate_item_suppressed_by_alpha(self, tiny_params):
        feats = np.array([[1.0, 0.0, 0.0, 0.0],
                          [1.0, 0.0, 0.0, 0.0],
                          [0.0, 1.0, 0.0, 0.0]])
        inst = RankingInstance("dup", feats, [0.0, 0.0], [0, 0, 0], [0, 0, 0])
        # zero position embeddings so the duplicated rows embed identically
        z = np.zeros((3, 6))
        d0 = decode_slate(inst, tiny_params, alpha=0.0, forced_order=[0, 1, 2], z=z)
        d1 = decode_slate(inst, tiny_params, alpha=2.0, forced_order=[0, 1, 2], z=z)
        p0 = float(d0.step_probabilities[1][1].data)
        p1 = float(d1.step_probabilities[1][1].data)
        assert float(d1.step_determinants[1].data) == pytest.approx(0.0, abs=1e-9)
        assert p1 < p0

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=25, deadline=None)
    def test_permutation_validity(self, seed):
        rng = np.random.default_rng(seed)
        cfg = ModelConfig(item_dim=3, user_dim=1, d_k=4, d_v=4)
        params = DivNetParams.init(cfg, seed=seed)
        inst = random_instance(rng, m=3, k=1, max_n=6)
        mode = "sample" if seed % 2 else "greedy"
        d = decode_slate(inst, params, mode=mode, seed=seed)
        assert sorted(d.permutation) == list(range(inst.num_items))

    def test_forced_order_records_that_order(self, tiny_params, tiny_instance):
        order = [2, 0, 3, 1]
        d = decode_slate(tiny_instance, tiny_params, forced_order=order)
        assert d.permutation == order


class TestExportAttention:
    def test_shape_and_triangularity(self, tiny_params, tiny_instance):
        d = decode_slate(tiny_instance, tiny_params)
        m = export_attention(d)
        n = tiny_instance.num_items
        assert m.shape == (n, n)
        assert np.array_equal(np.triu(m, k=1), np.zeros((n, n)))
        assert m[0, 0] == pytest.approx(1.0)
        assert np.allclose(m.sum(axis=1), 1.0, atol=1e-9)


class TestParamInit:
    def test_uniform_init_range(self, tiny_config):
        params = DivNetParams.init(tiny_config, seed=0)
        for _, t in params.named_tensors():
            assert np.all(np.abs(t.data) <= 0.1)

    def test_copy_is_independent(self, tiny_params):
        c = tiny_params.copy()
        c.w_out.data += 1.0
        assert not np.array_equal(c.w_out.data, tiny_params.w_out.data)
