"""
Category Analysis
How closely skipped items resemble the positives they sit next to
"""

from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field

from errors import ContractError
from interactions import CategoryTriple, FeedbackLabel, InteractionLog

logger = structlog.get_logger(__name__)

CASES = (1, 2, 3, 4)

__all__ = [
    "CategoryTriple",
    "CaseHistogram",
    "NegativeKind",
    "classify_case",
    "categorize_pairs",
    "write_histograms",
]


class NegativeKind(str, Enum):
    OBSERVED = "observed_negative"
    RANDOM = "random_negative"


class CaseHistogram(BaseModel):
    kind: NegativeKind
    counts: Dict[int, int] = Field(default_factory=lambda: {case: 0 for case in CASES})
    skipped: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def fraction(self, case: int) -> float:
        return self.counts[case] / self.total if self.total else 0.0

    def add(self, case: int):
        self.counts[case] += 1


def classify_case(positive: CategoryTriple, negative: CategoryTriple) -> int:
    """
    1: different level 1; 2: same level 1, different level 2;
    3: same levels 1-2, different level 3; 4: same all three
    """
    if positive.level1 != negative.level1:
        return 1
    if positive.level2 != negative.level2:
        return 2
    if positive.level3 != negative.level3:
        return 3
    return 4


def _triple(row) -> Optional[CategoryTriple]:
    if not (isinstance(row[0], str) and row[0]):
        return None
    return CategoryTriple(level1=row[0], level2=row[1], level3=row[2])


def categorize_pairs(
    log: InteractionLog,
    window: int = 1,
    rng: Optional[np.random.Generator] = None,
    multiplicity: Literal["all", "nearest"] = "all",
) -> Tuple[CaseHistogram, CaseHistogram]:
    """
    Case histograms of positive/skip pairs and of positive/random-item pairs

    A pair is a positive and a passive negative of the same user at most
    ``window`` events apart (either side, gray-zone events removed). Every
    positive with at least one such pair is also compared against one item
    drawn uniformly from the categorized catalog. Events without a category
    are skipped and counted in ``skipped``.

    Args:
        log: labeled log with categories
        window: largest event distance that still forms a pair
        rng: generator for the random comparison items
        multiplicity: ``all`` counts every in-window negative, ``nearest``
            only the closest one (earlier on a tie)

    Returns:
        (observed histogram, random histogram)
    """
    if not log.is_labeled:
        raise ContractError("categorize_pairs needs a labeled log")
    if window < 1:
        raise ContractError(f"window must be >= 1, got {window}")
    rng = rng or np.random.Generator(np.random.Philox(0))

    frame = log.frame[log.frame["label"] != FeedbackLabel.DISCARD.value]
    catalog_frame = frame.dropna(subset=["cat_l1"]).drop_duplicates("item_id")
    catalog: List[CategoryTriple] = [
        _triple(row) for row in catalog_frame[["cat_l1", "cat_l2", "cat_l3"]].itertuples(index=False)
    ]

    observed = CaseHistogram(kind=NegativeKind.OBSERVED)
    random = CaseHistogram(kind=NegativeKind.RANDOM)

    for _, group in frame.groupby("user_id", sort=False):
        labels = group["label"].to_numpy()
        triples = [_triple(row) for row in group[["cat_l1", "cat_l2", "cat_l3"]].itertuples(index=False)]
        positive = labels == FeedbackLabel.POSITIVE.value
        for t in np.flatnonzero(positive):
            lo, hi = max(t - window, 0), min(t + window, len(labels) - 1)
            near = [j for j in range(lo, hi + 1) if j != t and not positive[j]]
            if not near:
                continue
            if multiplicity == "nearest":
                near = [min(near, key=lambda j: (abs(j - t), j))]
            if triples[t] is None:
                observed.skipped += len(near)
                continue
            classified = 0
            for j in near:
                if triples[j] is None:
                    observed.skipped += 1
                    continue
                observed.add(classify_case(triples[t], triples[j]))
                classified += 1
            if classified and catalog:
                other = catalog[int(rng.integers(len(catalog)))]
                random.add(classify_case(triples[t], other))
            elif classified:
                random.skipped += 1

    logger.info(
        "category pairs classified",
        observed=observed.total,
        random=random.total,
        skipped=observed.skipped,
        case4_observed=observed.fraction(4),
        case4_random=random.fraction(4),
    )
    return observed, random


def write_histograms(observed: CaseHistogram, random: CaseHistogram, output_path: Union[str, Path]) -> Path:
    """Tab-separated counts and fractions per case, one row per case"""
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["case\tobserved_count\tobserved_fraction\trandom_count\trandom_fraction"]
    for case in CASES:
        lines.append(
            f"case{case}\t{observed.counts[case]}\t{observed.fraction(case)!r}"
            f"\t{random.counts[case]}\t{random.fraction(case)!r}"
        )
    lines.append(f"# skipped\t{observed.skipped}\t\t{random.skipped}\t")
    output_path.write_text("\n".join(lines) + "\n")
    logger.info("category histograms written", path=str(output_path))
    return output_path
