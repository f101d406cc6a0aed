"""
Tests for sub-interest assignment, the beta-modulated encoder, projection,
fusion, scoring and checkpoints
"""

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import rankdata

from conftest import NEG, POS, make_sequence
from errors import ContractError, SchemaError, VocabularyError
from interactions import label_feedback
from sequences import build_sequences
from sine_model import (
    ModelConfig,
    ModelParams,
    SineModel,
    active_interests,
    assign_sub_interest,
    beta_weights,
    encode,
    fuse_score,
    fusion_weights,
    load_checkpoint,
    pair_recent_negative,
    project_sub_interests,
    sasrec_score,
    save_checkpoint,
    score_next,
)
from synthworld import SynthConfig, generate

N_ITEMS = 10


def test_config_validation():
    with pytest.raises(ValidationError):
        ModelConfig(dim=10, n_heads=3)
    with pytest.raises(ValidationError):
        ModelConfig(architecture="sasrec", n_interests=2, ablate_negative_feedback=True)
    with pytest.raises(ValidationError):
        ModelConfig(architecture="sasrec", n_interests=1)
    assert ModelConfig(beta1=0.7).beta2 == pytest.approx(0.3)


def test_initialization_shapes_and_orthonormal_prototypes(micro_config):
    params = ModelParams.initialize(micro_config, N_ITEMS)
    assert params["item_embeddings"].shape == (N_ITEMS, 8)
    assert params["position_embeddings"].shape == (6, 8)
    z = params["prototypes"]
    np.testing.assert_allclose(z @ z.T, np.eye(3), atol=1e-12)
    np.testing.assert_array_equal(params["block0.ln_gain"], np.ones(8))
    assert np.all(np.abs(params["block0.wq"]) <= 1.0 / np.sqrt(8))

    again = ModelParams.initialize(micro_config, N_ITEMS)
    for name in params:
        np.testing.assert_array_equal(params[name], again[name])


def test_initial_scores_are_finite_on_random_sequences():
    config = ModelConfig(dim=8, n_interests=3, max_len=12, n_heads=2, init_seed=17)
    model = SineModel.initialize(config, 40)
    rng = np.random.Generator(np.random.Philox(17))
    candidates = np.arange(40)
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        items = rng.integers(0, 40, size=n)
        mask = rng.random(n) < 0.6
        mask[int(rng.integers(n))] = True
        assert np.isfinite(model.score_next(items, mask, candidates)).all()


def test_validate_shapes_rejects_mismatch(micro_config):
    params = ModelParams.initialize(micro_config, N_ITEMS)
    params.register("fusion_w", np.zeros(3))
    with pytest.raises(ContractError):
        SineModel(micro_config, params)


class TestAssignment:
    z = np.eye(3)

    def test_gap_against_recent_negative(self):
        assert assign_sub_interest(self.z[1], self.z[2], self.z) == 1

    def test_plain_match_without_negative(self):
        assert assign_sub_interest(self.z[2], None, self.z) == 2

    def test_tie_goes_to_lowest_index(self):
        assert assign_sub_interest((self.z[0] + self.z[1]) / np.sqrt(2.0), None, self.z) == 0

    def test_pairing_window(self):
        seq = make_sequence("u", [4, 7], [NEG, POS])
        assert pair_recent_negative(seq, 1, 5) == 4

        seq = make_sequence("u", [4, 7, 8], [NEG, POS, POS])
        assert pair_recent_negative(seq, 2, 1) is None

        seq = make_sequence("u", [4, 5, 7], [NEG, NEG, POS])
        assert pair_recent_negative(seq, 2, 5) == 5

    def test_pairing_needs_a_positive(self):
        seq = make_sequence("u", [4, 7], [NEG, POS])
        with pytest.raises(ContractError):
            pair_recent_negative(seq, 0, 5)

    def test_active_interest_is_causal(self):
        assignments = np.array([2, 1, 0, 1, 2])
        mask = np.array([False, True, False, True, False])
        np.testing.assert_array_equal(active_interests(assignments, mask), [2, 1, 1, 1, 1])
        np.testing.assert_array_equal(active_interests(assignments, mask, causal=False), [1, 1, 1, 1, 1])

    def test_beta_weights(self):
        beta = beta_weights(np.array([0, 1, 0]), np.array([0, 0, 1]), 0.7)
        np.testing.assert_allclose(beta, [[0.7, 0.3, 0.7], [0.7, 0.3, 0.7], [0.3, 0.7, 0.3]])


class TestEncoder:
    def encode_attention(self, config, assignments, items=(1, 2, 3, 4)):
        params = ModelParams.initialize(config, N_ITEMS)
        items = np.array(items)
        mask = np.ones(len(items), dtype=bool)
        _, caches = encode(items, mask, np.asarray(assignments), params, config)
        return caches[0].attention[8][0]

    def test_shared_sub_interest_scales_attention_uniformly(self, micro_config):
        config = micro_config.model_copy(update={"beta1": 0.6})
        alpha, alpha_hat = self.encode_attention(config, [1, 1, 1, 1])
        np.testing.assert_array_equal(alpha_hat, 0.6 * alpha)

    def test_equal_betas_ignore_assignments(self, micro_config):
        config = micro_config.model_copy(update={"beta1": 0.5})
        alpha, alpha_hat = self.encode_attention(config, [0, 2, 1, 0])
        np.testing.assert_array_equal(alpha_hat, 0.5 * alpha)

    def test_causal_attention_ignores_the_future(self, micro_config):
        alpha, _ = self.encode_attention(micro_config, [0, 1, 2, 0])
        np.testing.assert_array_equal(alpha, np.tril(alpha))
        np.testing.assert_allclose(alpha.sum(axis=1), np.ones(4))

    def test_single_item(self, micro_config):
        params = ModelParams.initialize(micro_config, N_ITEMS)
        out, caches = encode(np.array([3]), np.array([True]), np.array([0]), params, micro_config)
        assert out.shape == (1, 8)
        assert np.all(np.isfinite(out))
        alpha, alpha_hat = caches[0].attention[8][0]
        assert alpha[0, 0] == 1.0

    def test_length_contracts(self, micro_config):
        params = ModelParams.initialize(micro_config, N_ITEMS)
        too_long = np.arange(7)
        with pytest.raises(ContractError):
            encode(too_long, np.ones(7, dtype=bool), np.zeros(7, dtype=int), params, micro_config)
        with pytest.raises(ContractError):
            encode(np.array([], dtype=int), np.array([], dtype=bool), np.array([], dtype=int), params, micro_config)
        with pytest.raises(ContractError):
            encode(np.arange(3), np.ones(3, dtype=bool), np.zeros(2, dtype=int), params, micro_config)

    def test_outputs_do_not_depend_on_later_events(self, micro_config):
        model = SineModel.initialize(micro_config, N_ITEMS)
        items = np.array([1, 5, 2, 7, 3, 9])
        mask = np.array([True, False, True, True, False, True])
        full = model.trace(items, mask)
        changed_items = items.copy()
        changed_items[4:] = [8, 0]
        changed = model.trace(changed_items, np.array([True, False, True, True, True, False]))
        np.testing.assert_allclose(full.output[:4], changed.output[:4], rtol=0, atol=1e-12)
        np.testing.assert_array_equal(full.assignments[:4], changed.assignments[:4])

    def test_multi_head_multi_block(self):
        config = ModelConfig(dim=8, n_interests=2, max_len=6, n_heads=2, n_blocks=2, init_seed=3)
        model = SineModel.initialize(config, N_ITEMS)
        trace = model.trace(np.array([1, 2, 3]), np.array([True, False, True]))
        assert len(trace.blocks) == 2
        assert trace.output.shape == (3, 8)
        alpha, _ = trace.attention_weights(block=1, head=1)
        np.testing.assert_allclose(alpha.sum(axis=1), np.ones(3))


class TestProjection:
    def test_zero_output_projects_to_zero(self, rng):
        sub = project_sub_interests(np.zeros(4), rng.normal(size=(3, 4)))
        np.testing.assert_array_equal(sub, np.zeros((3, 4)))

    def test_zero_prototype_gates_at_one_half(self, rng):
        o = rng.normal(size=4)
        sub = project_sub_interests(o, np.zeros((2, 4)))
        np.testing.assert_allclose(sub, np.vstack([1.5 * o, 1.5 * o]))

    def test_opposite_prototypes_sum_to_three_times_output(self, rng):
        o = rng.normal(size=5)
        z = rng.normal(size=5)
        sub = project_sub_interests(o, np.vstack([z, -z]))
        np.testing.assert_allclose(sub[0] + sub[1], 3.0 * o)

    def test_coordinates_keep_sign_and_stay_within_double(self, rng):
        o = rng.normal(size=6)
        sub = project_sub_interests(o, rng.normal(size=(3, 6)) * 4.0)
        ratio = sub / o
        assert np.all(ratio >= 1.0) and np.all(ratio <= 2.0)

    def test_scalar_gate_keeps_sub_interests_colinear(self, rng):
        o = rng.normal(size=4)
        sub = project_sub_interests(o, rng.normal(size=(3, 4)), scalar_gate=True)
        for row in sub:
            ratio = row / o
            np.testing.assert_allclose(ratio, ratio[0] * np.ones(4))


class TestFusion:
    def test_single_interest_weight_is_one(self, rng):
        sub, e = rng.normal(size=(1, 4)), rng.normal(size=4)
        w, b = rng.normal(size=8), 0.3
        assert fuse_score(sub, e, w, b) == pytest.approx(float(sub[0] @ e))

    def test_identical_sub_interests_share_weight(self, rng):
        row, e = rng.normal(size=4), rng.normal(size=4)
        sub = np.vstack([row, row, row])
        w = rng.normal(size=8)
        np.testing.assert_allclose(fusion_weights(sub, e, w, np.array([0.1])), np.full(3, 1.0 / 3.0))
        assert fuse_score(sub, e, w, 0.1) == pytest.approx(float(row @ e))

    def test_ablated_fusion_uses_the_active_sub_interest(self, rng):
        sub, e = rng.normal(size=(3, 4)), rng.normal(size=4)
        score = fuse_score(sub, e, rng.normal(size=8), 0.0, ablate_adaptive_fusion=True, active_k=2)
        assert score == pytest.approx(float(sub[2] @ e), rel=1e-12)
        with pytest.raises(ContractError):
            fuse_score(sub, e, rng.normal(size=8), 0.0, ablate_adaptive_fusion=True)

    def test_fusion_weights_are_a_distribution(self, rng):
        for _ in range(20):
            gamma = fusion_weights(rng.normal(size=(4, 6)), rng.normal(size=6), rng.normal(size=12), rng.normal(size=1))
            assert np.all(gamma > 0.0)
            assert gamma.sum() == pytest.approx(1.0)


class TestScoring:
    items = np.array([1, 4, 2, 5, 3])
    mask = np.array([True, False, True, False, True])

    def test_duplicate_candidates_score_equally(self, micro_config):
        model = SineModel.initialize(micro_config, N_ITEMS)
        scores = model.score_next(self.items, self.mask, np.array([7, 7, 0]))
        assert scores[0] == pytest.approx(scores[1], rel=1e-12)

    def test_permuting_candidates_permutes_scores(self, micro_config):
        model = SineModel.initialize(micro_config, N_ITEMS)
        candidates = np.array([0, 6, 7, 8, 9])
        order = np.array([3, 0, 4, 2, 1])
        scores = model.score_next(self.items, self.mask, candidates)
        permuted = model.score_next(self.items, self.mask, candidates[order])
        np.testing.assert_allclose(permuted, scores[order], rtol=0, atol=1e-12)

    def test_deterministic_given_parameters(self, micro_config):
        params = ModelParams.initialize(micro_config, N_ITEMS)
        first = score_next(self.items, self.mask, np.arange(N_ITEMS), params, micro_config)
        second = score_next(self.items, self.mask, np.arange(N_ITEMS), params, micro_config)
        np.testing.assert_array_equal(first, second)

    def test_unknown_item_is_a_vocabulary_error(self, micro_config):
        model = SineModel.initialize(micro_config, N_ITEMS)
        with pytest.raises(VocabularyError):
            model.score_next(self.items, self.mask, np.array([0, N_ITEMS]))
        with pytest.raises(VocabularyError):
            model.score_next(np.array([1, 42]), np.array([True, True]), np.array([0]))

    def test_negatives_only_prefix_without_negative_feedback(self):
        config = ModelConfig(dim=8, n_interests=2, max_len=6, ablate_negative_feedback=True)
        model = SineModel.initialize(config, N_ITEMS)
        with pytest.raises(ContractError):
            model.score_next(np.array([1, 2]), np.array([False, False]), np.array([0]))

    def test_negative_feedback_changes_scores(self, micro_config):
        with_negatives = SineModel.initialize(micro_config, N_ITEMS)
        config = micro_config.model_copy(update={"ablate_negative_feedback": True})
        without = SineModel(config, with_negatives.params)
        candidates = np.arange(N_ITEMS)
        assert not np.allclose(
            with_negatives.score_next(self.items, self.mask, candidates),
            without.score_next(self.items, self.mask, candidates),
        )

    def test_single_interest_with_zero_prototype_degenerates_to_sasrec(self):
        config = ModelConfig(dim=8, n_interests=1, max_len=6, ablate_negative_feedback=True, init_seed=5)
        params = ModelParams.initialize(config, N_ITEMS)
        params.params["prototypes"][:] = 0.0
        candidates = np.arange(N_ITEMS)

        sine = score_next(self.items, self.mask, candidates, params, config)
        baseline = sasrec_score(self.items, self.mask, candidates, params, config)
        np.testing.assert_allclose(sine, 1.5 * baseline, rtol=1e-12, atol=1e-14)
        np.testing.assert_array_equal(rankdata(sine), rankdata(baseline))

    def test_degenerate_rankings_match_sasrec_for_every_user(self):
        log, _ = generate(SynthConfig(n_users=120, n_items=60, dim=4, seed=31))
        dataset = build_sequences(label_feedback(log), max_len=20)
        users = [seq for seq in dataset.sequences if seq.prefix("test", 20)[1].any()][:100]
        assert len(users) == 100

        config = ModelConfig(dim=8, n_interests=1, max_len=20, ablate_negative_feedback=True, init_seed=9)
        params = ModelParams.initialize(config, dataset.n_items)
        params.params["prototypes"][:] = 0.0
        candidates = np.arange(dataset.n_items)
        for seq in users:
            items, mask = seq.prefix("test", 20)
            sine = score_next(items, mask, candidates, params, config)
            baseline = sasrec_score(items, mask, candidates, params, config)
            np.testing.assert_array_equal(rankdata(sine), rankdata(baseline))

    def test_sasrec_architecture_scores_by_dot_product(self):
        config = ModelConfig(
            architecture="sasrec", dim=8, n_interests=1, max_len=6, ablate_negative_feedback=True, beta1=1.0
        )
        params = ModelParams.initialize(config, N_ITEMS)
        candidates = np.arange(N_ITEMS)
        np.testing.assert_allclose(
            score_next(self.items, self.mask, candidates, params, config),
            sasrec_score(self.items, self.mask, candidates, params, config),
            rtol=1e-12,
            atol=1e-14,
        )


def test_checkpoint_round_trip(tmp_path, micro_config):
    params = ModelParams.initialize(micro_config, N_ITEMS)
    path = save_checkpoint(tmp_path / "checkpoint.npz", params, micro_config)
    config, loaded = load_checkpoint(path)
    assert config == micro_config
    assert set(loaded) == set(params)
    for name in params:
        np.testing.assert_array_equal(loaded[name], params[name])


def test_checkpoint_rejects_foreign_archives(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, weights=np.zeros(3))
    with pytest.raises(SchemaError):
        load_checkpoint(path)
