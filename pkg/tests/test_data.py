import itertools
import json

import numpy as np
import pytest

from divnet import data
from divnet.data import (
    CheckpointError,
    LetorParseError,
    SyntheticConfig,
    click_probabilities,
    expected_clicks,
    generate_synthetic,
    load_checkpoint,
    oracle_optimal_slate,
    parse_letor,
    save_checkpoint,
    serialize_letor,
    split,
)
from divnet.model import DivNetParams, ModelConfig, decode_slate


class TestParseLetor:
    def test_single_line(self):
        insts = parse_letor(["0 qid:1 1:1.0 2:0.5"], feature_width=4)
        assert len(insts) == 1
        inst = insts[0]
        assert inst.num_items == 1
        assert inst.relevance_grades[0] == 0
        assert np.array_equal(inst.item_features[0], [1.0, 0.5, 0.0, 0.0])

    def test_grouping_preserves_file_order(self):
        lines = ["1 qid:7 1:0.1", "2 qid:7 1:0.2", "0 qid:3 1:0.3"]
        insts = parse_letor(lines, feature_width=1)
        assert [i.query_id for i in insts] == ["7", "3"]
        assert insts[0].num_items == 2
        assert np.allclose(insts[0].item_features[:, 0], [0.1, 0.2])

    def test_binarization_threshold(self):
        insts = parse_letor(["3 qid:1 1:1", "2 qid:1 1:2"], feature_width=1)
        assert list(insts[0].click_labels) == [1, 0]
        assert list(insts[0].relevance_grades) == [3, 2]

    def test_comment_stripping(self):
        insts = parse_letor(["4 qid:1 1:1.0 # docid=17"], feature_width=1)
        assert insts[0].relevance_grades[0] == 4

    def test_malformed_line_names_line_number(self):
        with pytest.raises(LetorParseError, match="line 2"):
            parse_letor(["0 qid:1 1:1.0", "garbage"], feature_width=1)

    def test_non_integer_grade(self):
        with pytest.raises(LetorParseError, match="grade"):
            parse_letor(["x qid:1 1:1.0"], feature_width=1)

    def test_crlf_tolerated(self):
        insts = parse_letor(["1 qid:1 1:1.0\r\n"], feature_width=1)
        assert insts[0].num_items == 1

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        syn, _ = generate_synthetic(SyntheticConfig(num_items=5, seed=3), 4)
        text = serialize_letor(syn)
        back = parse_letor(text.splitlines(), feature_width=6)
        for a, b in zip(syn, back):
            assert a.query_id == b.query_id
            assert np.array_equal(a.relevance_grades, b.relevance_grades)
            assert np.array_equal(a.item_features, b.item_features)


class TestSplit:
    def _make(self, n):
        syn, _ = generate_synthetic(SyntheticConfig(num_items=3, seed=0), n)
        return syn

    def test_ratios(self):
        train, val, test = split(self._make(10), seed=0)
        assert (len(train), len(val), len(test)) == (8, 1, 1)

    def test_deterministic(self):
        insts = self._make(20)
        a = split(insts, seed=5)
        b = split(insts, seed=5)
        assert [i.query_id for i in a[0]] == [i.query_id for i in b[0]]

    def test_partition(self):
        insts = self._make(17)
        train, val, test = split(insts, seed=1)
        ids = [i.query_id for i in train + val + test]
        assert sorted(ids) == sorted(i.query_id for i in insts)
        assert len(set(ids)) == len(ids)

    def test_too_few_queries(self):
        with pytest.raises(ValueError):
            split(self._make(2))

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            split(self._make(5), ratios=(0.5, 0.2, 0.2))


class TestSynthetic:
    def test_pure_function_of_seed(self):
        cfg = SyntheticConfig(num_items=4, seed=9)
        a, meta_a = generate_synthetic(cfg, 5)
        b, meta_b = generate_synthetic(cfg, 5)
        for x, y in zip(a, b):
            assert np.array_equal(x.item_features, y.item_features)
            assert np.array_equal(x.click_labels, y.click_labels)
        assert meta_a == meta_b

    def test_beta_one_has_no_interaction(self):
        # CTR of each display slot matches a * d_t within 3 sigma
        cfg = SyntheticConfig(num_items=3, num_categories=1, beta=1.0, seed=1)
        insts, meta = generate_synthetic(cfg, 20_000)
        err = 0
        for t in range(3):
            clicks = np.array([i.click_labels[t] for i in insts])
            expected = np.mean([meta[i.query_id]["attractiveness"][t]
                                for i in insts]) * data.position_discount(t + 1)
            sigma = np.sqrt(expected * (1 - expected) / len(insts))
            assert abs(clicks.mean() - expected) < 3 * sigma + 1e-3

    def test_same_category_suppression_halves_probability(self):
        probs = click_probabilities([0.8, 0.8], [0, 0], beta=0.5)
        fresh = click_probabilities([0.8, 0.8], [0, 1], beta=0.5)
        assert probs[1] == pytest.approx(0.5 * fresh[1])

    def test_invalid_beta(self):
        with pytest.raises(ValueError):
            SyntheticConfig(beta=0.0)


class TestOracle:
    def test_beta_one_optimal_is_descending_attractiveness(self):
        a = [0.3, 0.9, 0.5]
        perm, _ = oracle_optimal_slate(a, [0, 1, 2], beta=1.0)
        assert perm == [1, 2, 0]

    def test_small_beta_interleaves_distinct_category(self):
        # two same-category attractive items, one distinct weaker item
        a = [0.9, 0.85, 0.5]
        cats = [0, 0, 1]
        perm, val = oracle_optimal_slate(a, cats, beta=0.1)
        # the distinct item splits the same-category pair
        assert perm.index(2) == 1
        brute = max(expected_clicks(p, a, cats, 0.1)
                    for p in itertools.permutations(range(3)))
        assert val == pytest.approx(brute)

    def test_beats_random_permutations(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0.1, 0.9, size=6)
        cats = rng.integers(0, 3, size=6)
        _, best = oracle_optimal_slate(a, cats, beta=0.5)
        for _ in range(1000):
            perm = rng.permutation(6)
            assert best >= expected_clicks(perm, a, cats, 0.5) - 1e-12

    def test_factorial_guard(self):
        with pytest.raises(ValueError, match="reduce"):
            oracle_optimal_slate(np.ones(11), np.zeros(11), 0.5)

    def test_diversity_strictly_helps_on_collision(self):
        a = [0.9, 0.9, 0.4]
        cats = [0, 0, 1]
        _, best = oracle_optimal_slate(a, cats, beta=0.2)
        greedy_desc = expected_clicks([0, 1, 2], a, cats, beta=0.2)
        assert best > greedy_desc


class TestCheckpoint:
    def _params(self):
        cfg = ModelConfig(item_dim=3, user_dim=1, d_k=4, d_v=4)
        return DivNetParams.init(cfg, seed=2)

    def test_round_trip_bit_identical(self):
        params = self._params()
        text = save_checkpoint(params)
        loaded = load_checkpoint(text)["params"]
        for (_, a), (_, b) in zip(params.named_tensors(),
                                  loaded.named_tensors()):
            assert np.array_equal(a.data, b.data)

    def test_save_load_save_byte_identical(self):
        text = save_checkpoint(self._params())
        again = save_checkpoint(load_checkpoint(text)["params"])
        assert text == again

    def test_unknown_version(self):
        doc = json.loads(save_checkpoint(self._params()))
        doc["version"] = 999
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(json.dumps(doc))

    def test_truncated_input(self):
        text = save_checkpoint(self._params())
        with pytest.raises(CheckpointError):
            load_checkpoint(text[: len(text) // 2])

    def test_decode_identical_after_round_trip(self):
        params = self._params()
        syn, _ = generate_synthetic(
            SyntheticConfig(num_items=5, num_categories=2, seed=4), 1)
        inst = syn[0]
        inst.item_features = inst.item_features[:, :3]  # match tiny dims
        inst.user_features = np.zeros(1)
        before = decode_slate(inst, params, alpha=0.2)
        loaded = load_checkpoint(save_checkpoint(params))["params"]
        after = decode_slate(inst, loaded, alpha=0.2)
        assert before.permutation == after.permutation
        assert float(before.log_prob.data) == float(after.log_prob.data)
