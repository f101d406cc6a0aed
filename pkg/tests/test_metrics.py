"""
Tests for AUC, GAUC, NDCG@K and HR@K against brute-force pair counting
"""

import itertools
import math

import numpy as np
import pytest
from pydantic import ValidationError

from errors import UndefinedMetricError
from metrics import RankedCandidates, auc, gauc, hit_rate_at_k, ndcg_at_k, positive_rank


def brute_force_auc(scores, labels):
    wins = 0.0
    pairs = 0
    for p, n in itertools.product(range(len(scores)), repeat=2):
        if labels[p] and not labels[n]:
            pairs += 1
            wins += 1.0 if scores[p] > scores[n] else 0.5 if scores[p] == scores[n] else 0.0
    return wins / pairs


def instance(user, scores, positive_at):
    labels = [0] * len(scores)
    labels[positive_at] = 1
    return RankedCandidates(user=user, candidates=list(range(len(scores))), scores=list(scores), labels=labels)


def test_auc_examples():
    assert auc([0.9, 0.1], [1, 0]) == 1.0
    assert auc([0.3, 0.3], [1, 0]) == 0.5
    assert auc([3, 2, 1], [0, 1, 0]) == 0.5


def test_auc_single_class_is_undefined():
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [0, 0])


def test_auc_matches_brute_force_on_random_instances(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        # coarse scores so ties actually happen
        scores = rng.integers(0, 4, size=n).astype(float)
        labels = rng.integers(0, 2, size=n)
        if labels.all() or not labels.any():
            labels[0] = 1 - labels[0]
        assert auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)


def brute_force_ndcg(scores, positive_at, k):
    rank = 1
    for j, score in enumerate(scores):
        if score > scores[positive_at] or (score == scores[positive_at] and j < positive_at):
            rank += 1
    return 1.0 / math.log2(1 + rank) if rank <= k else 0.0


def random_instance(rng, user):
    n = int(rng.integers(1, 21))
    scores = rng.integers(0, 5, size=n).astype(float)
    return instance(user, scores, int(rng.integers(n)))


def test_gauc_matches_brute_force_on_random_instances(rng):
    for _ in range(1000):
        instances = [random_instance(rng, f"u{u}") for u in range(int(rng.integers(1, 6)))]
        weighted = [(len(i.scores) - 1, i) for i in instances if len(i.scores) > 1]
        if not weighted:
            with pytest.raises(UndefinedMetricError):
                gauc(instances)
            continue
        expected = sum(w * brute_force_auc(i.scores, i.labels) for w, i in weighted) / sum(w for w, _ in weighted)
        assert gauc(instances) == pytest.approx(expected, abs=1e-12)


def test_ndcg_matches_brute_force_on_random_instances(rng):
    for _ in range(1000):
        inst = random_instance(rng, "u")
        positive_at = inst.labels.index(1)
        expected = brute_force_ndcg(inst.scores, positive_at, 2)
        assert ndcg_at_k(inst.scores, inst.labels, 2) == pytest.approx(expected, abs=1e-15)


def test_metrics_are_invariant_under_monotone_transforms(rng):
    scores = rng.normal(size=30)
    labels = np.zeros(30, dtype=int)
    labels[7] = 1
    transformed = np.exp(3.0 * scores) + 1.0
    assert auc(scores, labels) == auc(transformed, labels)
    assert ndcg_at_k(scores, labels, 5) == ndcg_at_k(transformed, labels, 5)


def test_gauc_examples():
    one = instance("u1", [0.9, 0.5, 0.1], 1)
    assert gauc([one]) == auc(one.scores, one.labels)

    best = instance("u1", [0.9, 0.1], 0)
    worst = instance("u2", [0.9, 0.1], 1)
    assert gauc([best, worst]) == 0.5

    heavy = instance("u1", [4.0, 3.0, 2.0, 1.0], 0)
    tied = instance("u2", [1.0, 1.0], 1)
    assert heavy.pair_count == 3
    assert gauc([heavy, tied]) == pytest.approx(0.875)


def test_gauc_without_pairs_is_undefined():
    lonely = RankedCandidates(user="u", candidates=[1], scores=[0.4], labels=[1])
    with pytest.raises(UndefinedMetricError):
        gauc([lonely])
    with pytest.raises(UndefinedMetricError):
        gauc([])


def test_ranked_candidates_needs_exactly_one_positive():
    with pytest.raises(ValidationError):
        RankedCandidates(user="u", candidates=[1, 2], scores=[0.1, 0.2], labels=[1, 1])
    with pytest.raises(ValidationError):
        RankedCandidates(user="u", candidates=[1, 2], scores=[0.1], labels=[1, 0])


@pytest.mark.parametrize(
    "scores,expected",
    [
        ([0.9, 0.5, 0.1], 1.0),
        ([0.5, 0.9, 0.1], 1.0 / np.log2(3.0)),
        ([0.1, 0.9, 0.5], 0.0),
    ],
)
def test_ndcg_at_2(scores, expected):
    assert ndcg_at_k(scores, [1, 0, 0], 2) == pytest.approx(expected)


def test_ndcg_at_2_value():
    assert ndcg_at_k([0.5, 0.9, 0.1], [1, 0, 0]) == pytest.approx(0.6309, abs=1e-4)


def test_hit_rate_and_rank_ties():
    # the later of two equal scores ranks lower
    assert positive_rank([0.5, 0.5, 0.1], [0, 1, 0]) == 2
    assert positive_rank([0.5, 0.5, 0.1], [1, 0, 0]) == 1
    assert hit_rate_at_k([0.2, 0.9, 0.8, 0.1], [1, 0, 0, 0], 2) == 0.0
    assert hit_rate_at_k([0.2, 0.9, 0.8, 0.1], [1, 0, 0, 0], 3) == 1.0


def test_ndcg_without_relevant_item_is_undefined():
    with pytest.raises(UndefinedMetricError):
        ndcg_at_k([0.3, 0.2], [0, 0])
