"""
Sequences
Per-user mixed-feedback sequences with a leave-one-out split on positives
"""

import json
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, PrivateAttr, model_validator

from errors import ContractError, SchemaError, VocabularyError
from interactions import FeedbackLabel, InteractionLog

logger = structlog.get_logger(__name__)

FORMAT_HEADER = "# sine-dataset v1"


class UserSequence(BaseModel):
    """
    One user's history, split for training and evaluation

    Item fields hold vocabulary indices. ``items``/``labels``/``timestamps``
    are the training portion (strictly before the validation target);
    ``holdout_*`` are the events from the validation target up to, not
    including, the test target.
    """

    user_id: str
    items: List[int]
    labels: List[FeedbackLabel]
    timestamps: List[int]
    val_target: int
    val_timestamp: int
    test_target: int
    test_timestamp: int
    holdout_items: List[int] = []
    holdout_labels: List[FeedbackLabel] = []
    holdout_timestamps: List[int] = []
    observed_items: List[int] = []

    @model_validator(mode="after")
    def _lengths_match(self):
        if not (len(self.items) == len(self.labels) == len(self.timestamps)):
            raise ValueError("items, labels and timestamps must have equal length")
        if not (len(self.holdout_items) == len(self.holdout_labels) == len(self.holdout_timestamps)):
            raise ValueError("holdout fields must have equal length")
        return self

    def positive_mask(self) -> np.ndarray:
        return np.array([label == FeedbackLabel.POSITIVE for label in self.labels], dtype=bool)

    def negative_positions(self) -> List[int]:
        return [i for i, label in enumerate(self.labels) if label == FeedbackLabel.PASSIVE_NEGATIVE]

    def prefix(self, split: str, max_len: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Encoder input for scoring a split's target

        Returns:
            (item indices, positive mask), at most ``max_len`` most recent events
        """
        if split == "val":
            items, labels = self.items, self.labels
        elif split == "test":
            items, labels = self.items + self.holdout_items, self.labels + self.holdout_labels
        else:
            raise ContractError(f"unknown split '{split}'")
        items = items[-max_len:]
        labels = labels[-max_len:]
        mask = np.array([label == FeedbackLabel.POSITIVE for label in labels], dtype=bool)
        return np.asarray(items, dtype=np.int64), mask

    def target(self, split: str) -> int:
        return self.val_target if split == "val" else self.test_target


class SequenceDataset(BaseModel):
    sequences: List[UserSequence]
    max_len: int
    item_vocab: List[str]
    drop_report: Dict[str, int] = {}

    _lookup: Optional[Dict[str, int]] = PrivateAttr(default=None)

    @property
    def n_items(self) -> int:
        return len(self.item_vocab)

    def index_of(self, item_id: str) -> int:
        if self._lookup is None:
            self._lookup = {item: i for i, item in enumerate(self.item_vocab)}
        try:
            return self._lookup[item_id]
        except KeyError:
            raise VocabularyError(item_id) from None


def build_sequences(log: InteractionLog, max_len: int = 50) -> SequenceDataset:
    """
    Split each user's labeled history for next-item training

    The last positive is the test target, the second-last the validation
    target; the training portion is everything strictly earlier than the
    validation target, truncated to its ``max_len`` most recent events.
    Users with fewer than three positives are dropped and counted.

    Args:
        log: labeled InteractionLog (discard rows are ignored)
        max_len: encoder window L

    Returns:
        SequenceDataset with a drop report
    """
    if not log.is_labeled:
        raise ContractError("build_sequences needs a labeled log")
    if max_len < 1:
        raise ContractError(f"max_len must be >= 1, got {max_len}")

    full = log.frame
    frame = full[full["label"] != FeedbackLabel.DISCARD.value]
    vocab = [str(item) for item in pd.unique(frame["item_id"])]
    index = {item: i for i, item in enumerate(vocab)}

    observed_by_user: Dict[str, List[int]] = {}
    for user_id, group in full.groupby("user_id", sort=False):
        seen = {index[item] for item in group["item_id"] if item in index}
        observed_by_user[user_id] = sorted(seen)

    sequences: List[UserSequence] = []
    dropped: Counter = Counter()
    for user_id, group in frame.groupby("user_id", sort=False):
        items = [index[item] for item in group["item_id"]]
        labels = [FeedbackLabel(label) for label in group["label"]]
        stamps = [int(ts) for ts in group["timestamp"]]

        positives = [i for i, label in enumerate(labels) if label == FeedbackLabel.POSITIVE]
        if len(positives) < 3:
            dropped["too_few_positives"] += 1
            continue
        val_pos, test_pos = positives[-2], positives[-1]
        val_ts, test_ts = stamps[val_pos], stamps[test_pos]
        if val_ts >= test_ts:
            dropped["target_timestamp_tie"] += 1
            continue

        train = [i for i in range(val_pos) if stamps[i] < val_ts][-max_len:]
        if not any(labels[i] == FeedbackLabel.POSITIVE for i in train):
            dropped["no_training_positive"] += 1
            continue
        holdout = [i for i in range(val_pos, test_pos) if stamps[i] < test_ts]

        sequences.append(
            UserSequence(
                user_id=str(user_id),
                items=[items[i] for i in train],
                labels=[labels[i] for i in train],
                timestamps=[stamps[i] for i in train],
                val_target=items[val_pos],
                val_timestamp=val_ts,
                test_target=items[test_pos],
                test_timestamp=test_ts,
                holdout_items=[items[i] for i in holdout],
                holdout_labels=[labels[i] for i in holdout],
                holdout_timestamps=[stamps[i] for i in holdout],
                observed_items=observed_by_user[user_id],
            )
        )

    if dropped:
        logger.warning("users dropped while building sequences", **dict(dropped))
    logger.info("sequences built", users=len(sequences), items=len(vocab), max_len=max_len)
    return SequenceDataset(
        sequences=sequences,
        max_len=max_len,
        item_vocab=vocab,
        drop_report=dict(dropped),
    )


def save_dataset(dataset: SequenceDataset, path: Union[str, Path]) -> Path:
    """Write the dataset as a versioned JSON-lines file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "max_len": dataset.max_len,
        "item_vocab": dataset.item_vocab,
        "drop_report": dataset.drop_report,
    }
    with open(path, "w") as f:
        f.write(FORMAT_HEADER + "\n")
        f.write(json.dumps(meta) + "\n")
        for seq in dataset.sequences:
            f.write(seq.model_dump_json() + "\n")
    logger.info("dataset saved", path=str(path), users=len(dataset.sequences))
    return path


def load_dataset(path: Union[str, Path]) -> SequenceDataset:
    path = Path(path)
    with open(path) as f:
        header = f.readline().rstrip("\n")
        if header != FORMAT_HEADER:
            raise SchemaError(f"{path}: unsupported dataset header {header!r}")
        meta = json.loads(f.readline())
        sequences = [UserSequence.model_validate_json(line) for line in f if line.strip()]
    return SequenceDataset(sequences=sequences, **meta)
