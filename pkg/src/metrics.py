"""
Metrics
Rank-based AUC, GAUC, NDCG@K and HR@K
"""

from typing import Sequence

import numpy as np
from pydantic import BaseModel, model_validator
from scipy.stats import rankdata

from errors import UndefinedMetricError


class RankedCandidates(BaseModel):
    """One test instance: a user's candidates with scores and exactly one positive"""

    user: str
    candidates: list
    scores: list
    labels: list

    @model_validator(mode="after")
    def _one_positive(self):
        if not (len(self.scores) == len(self.candidates) == len(self.labels)):
            raise ValueError("candidates, scores and labels must have equal length")
        if sum(1 for label in self.labels if label) != 1:
            raise ValueError("exactly one positive label is required")
        return self

    @property
    def pair_count(self) -> int:
        return len(self.labels) - 1


def _binary(labels) -> np.ndarray:
    return np.asarray(labels).astype(bool)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Probability that a random positive outranks a random negative

    Ties count one half. Computed from the rank sum of the positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = _binary(labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auc needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def gauc(instances: Sequence[RankedCandidates]) -> float:
    """
    Per-user AUC averaged with pair-count weights

    Users whose AUC is undefined are left out of both sums.
    """
    total = 0.0
    weight = 0
    for inst in instances:
        pairs = inst.pair_count
        if pairs == 0:
            continue
        total += pairs * auc(inst.scores, inst.labels)
        weight += pairs
    if weight == 0:
        raise UndefinedMetricError("gauc: no user has a defined auc")
    return total / weight


def positive_rank(scores: Sequence[float], labels: Sequence[int]) -> int:
    """
    1-based rank of the single positive

    Equal scores are ordered by input position, earlier first.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = _binary(labels)
    positives = np.flatnonzero(labels)
    if len(positives) != 1:
        raise UndefinedMetricError(f"expected exactly one relevant item, got {len(positives)}")
    p = positives[0]
    target = scores[p]
    return 1 + int(np.sum(scores > target)) + int(np.sum(scores[:p] == target))


def ndcg_at_k(scores: Sequence[float], labels: Sequence[int], k: int = 2) -> float:
    rank = positive_rank(scores, labels)
    return float(1.0 / np.log2(1.0 + rank)) if rank <= k else 0.0


def hit_rate_at_k(scores: Sequence[float], labels: Sequence[int], k: int = 2) -> float:
    return 1.0 if positive_rank(scores, labels) <= k else 0.0
