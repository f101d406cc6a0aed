"""
Interactions
Ingestion, feedback labeling and N-core filtering of watch logs
"""

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field

from errors import ContractError, ParseError, SchemaError

logger = structlog.get_logger(__name__)

COLUMNS = [
    "user_id",
    "item_id",
    "timestamp",
    "watch_seconds",
    "video_seconds",
    "cat_l1",
    "cat_l2",
    "cat_l3",
]
REQUIRED = COLUMNS[:5]
CATEGORY_COLUMNS = COLUMNS[5:]
NUMERIC_COLUMNS = ["timestamp", "watch_seconds", "video_seconds"]


class FeedbackLabel(str, Enum):
    POSITIVE = "positive"
    PASSIVE_NEGATIVE = "passive_negative"
    DISCARD = "discard"


class CategoryTriple(BaseModel):
    """Three-level category path, coarse to fine"""

    model_config = ConfigDict(frozen=True)

    level1: str
    level2: str
    level3: str


class Interaction(BaseModel):
    """One watch event"""

    model_config = ConfigDict(frozen=True)

    user_id: str
    item_id: str
    timestamp: int
    watch_seconds: float = Field(ge=0.0)
    video_seconds: float = Field(gt=0.0)
    category: Optional[CategoryTriple] = None
    label: Optional[FeedbackLabel] = None


class DataSchema(BaseModel):
    """Maps canonical column names to the names used in a file"""

    user_id: str = "user_id"
    item_id: str = "item_id"
    timestamp: str = "timestamp"
    watch_seconds: str = "watch_seconds"
    video_seconds: str = "video_seconds"
    cat_l1: str = "cat_l1"
    cat_l2: str = "cat_l2"
    cat_l3: str = "cat_l3"
    delimiter: Optional[str] = None

    def resolve_delimiter(self, path: Path) -> str:
        if self.delimiter:
            return self.delimiter
        return "\t" if path.suffix.lower() in (".tsv", ".tab") else ","


@dataclass(frozen=True)
class InteractionLog:
    """
    Chronological interaction table

    Rows are grouped per user (users in order of first appearance) and sorted
    by timestamp within a user; ties keep file order. Operations never mutate
    a log, they return a new one.
    """

    frame: pd.DataFrame

    @property
    def user_count(self) -> int:
        return int(self.frame["user_id"].nunique())

    @property
    def item_count(self) -> int:
        return int(self.frame["item_id"].nunique())

    @property
    def is_labeled(self) -> bool:
        return "label" in self.frame.columns

    def __len__(self) -> int:
        return len(self.frame)

    def interactions(self) -> Iterator[Interaction]:
        labeled = self.is_labeled
        for row in self.frame.itertuples(index=False):
            category = None
            if isinstance(row.cat_l1, str) and row.cat_l1:
                category = CategoryTriple(level1=row.cat_l1, level2=row.cat_l2, level3=row.cat_l3)
            yield Interaction(
                user_id=row.user_id,
                item_id=row.item_id,
                timestamp=int(row.timestamp),
                watch_seconds=float(row.watch_seconds),
                video_seconds=float(row.video_seconds),
                category=category,
                label=FeedbackLabel(row.label) if labeled else None,
            )

    @classmethod
    def from_interactions(cls, interactions: List[Interaction]) -> "InteractionLog":
        records = []
        for it in interactions:
            cat = it.category
            record = {
                "user_id": it.user_id,
                "item_id": it.item_id,
                "timestamp": it.timestamp,
                "watch_seconds": it.watch_seconds,
                "video_seconds": it.video_seconds,
                "cat_l1": cat.level1 if cat else None,
                "cat_l2": cat.level2 if cat else None,
                "cat_l3": cat.level3 if cat else None,
            }
            if it.label is not None:
                record["label"] = it.label.value
            records.append(record)
        return cls.from_records(records)

    @classmethod
    def from_records(cls, records: List[dict]) -> "InteractionLog":
        """Build from plain dicts keyed by COLUMNS (plus ``label`` when labeled)"""
        frame = pd.DataFrame.from_records(records, columns=_columns_for(records))
        return cls(_sort_chronologically(_coerce_types(frame)))

    @classmethod
    def empty(cls) -> "InteractionLog":
        return cls(_coerce_types(pd.DataFrame(columns=COLUMNS)))


def _columns_for(records) -> List[str]:
    if records and "label" in records[0]:
        return COLUMNS + ["label"]
    return COLUMNS


def _coerce_types(frame: pd.DataFrame) -> pd.DataFrame:
    frame = frame.copy()
    frame["user_id"] = frame["user_id"].astype(str)
    frame["item_id"] = frame["item_id"].astype(str)
    frame["timestamp"] = frame["timestamp"].astype(np.int64)
    frame["watch_seconds"] = frame["watch_seconds"].astype(np.float64)
    frame["video_seconds"] = frame["video_seconds"].astype(np.float64)
    for col in CATEGORY_COLUMNS:
        frame[col] = frame[col].astype(object).where(frame[col].notna(), None)
    return frame


def _sort_chronologically(frame: pd.DataFrame) -> pd.DataFrame:
    user_order = pd.factorize(frame["user_id"])[0]
    position = np.arange(len(frame))
    order = np.lexsort((position, frame["timestamp"].to_numpy(), user_order))
    return frame.iloc[order].reset_index(drop=True)


def _first_undecodable_line(path: Path) -> int:
    for number, line in enumerate(path.read_bytes().splitlines(), start=1):
        try:
            line.decode("utf-8")
        except UnicodeDecodeError:
            return number
    return 1


def _read_table(path: Path, delimiter: str) -> pd.DataFrame:
    """``pd.read_csv`` with parser failures reported as ParseError"""
    try:
        return pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        # "Expected 5 fields in line 3, saw 6"
        found = re.search(r"line (\d+)", str(e))
        raise ParseError(int(found.group(1)) if found else 1, str(e).strip()) from e
    except UnicodeDecodeError as e:
        raise ParseError(_first_undecodable_line(path), f"not valid UTF-8: {e.reason}") from e
    except pd.errors.EmptyDataError as e:
        raise SchemaError(f"{path}: file has no header row") from e


def load_interactions(path: Union[str, Path], schema: Optional[DataSchema] = None) -> InteractionLog:
    """
    Read a delimiter-separated interaction file

    Args:
        path: CSV/TSV file with a header row
        schema: column mapping and delimiter (defaults to canonical names)

    Returns:
        InteractionLog sorted per user by timestamp

    Raises:
        SchemaError: a required column is missing
        ParseError: a row holds an unparseable or invalid value
    """
    path = Path(path)
    schema = schema or DataSchema()
    if not path.exists():
        raise FileNotFoundError(f"Interaction file not found: {path}")

    raw = _read_table(path, schema.resolve_delimiter(path))
    mapping = {getattr(schema, col): col for col in COLUMNS}
    missing = [src for src, col in mapping.items() if col in REQUIRED and src not in raw.columns]
    if missing:
        raise SchemaError(f"{path}: missing required column(s): {', '.join(missing)}")

    frame = raw.rename(columns=mapping)
    for col in CATEGORY_COLUMNS:
        if col not in frame.columns:
            frame[col] = ""
    frame = frame[COLUMNS].copy()

    # header is line 1, first data row is line 2
    for col in ("user_id", "item_id"):
        empty = frame[col].str.strip() == ""
        if empty.any():
            raise ParseError(int(np.argmax(empty.to_numpy())) + 2, f"empty {col}")

    for col in NUMERIC_COLUMNS:
        values = pd.to_numeric(frame[col], errors="coerce")
        bad = values.isna() | ~np.isfinite(values.fillna(0.0))
        if bad.any():
            row = int(np.argmax(bad.to_numpy()))
            raise ParseError(row + 2, f"cannot parse {col}={frame[col].iloc[row]!r}")
        frame[col] = values

    not_integral = frame["timestamp"] != np.floor(frame["timestamp"])
    if not_integral.any():
        raise ParseError(int(np.argmax(not_integral.to_numpy())) + 2, "timestamp must be integer seconds")
    negative_watch = frame["watch_seconds"] < 0
    if negative_watch.any():
        raise ParseError(int(np.argmax(negative_watch.to_numpy())) + 2, "watch_seconds must be >= 0")
    bad_video = frame["video_seconds"] <= 0
    if bad_video.any():
        raise ParseError(int(np.argmax(bad_video.to_numpy())) + 2, "video_seconds must be > 0")

    # a category is usable only with all three levels present
    complete = np.ones(len(frame), dtype=bool)
    for col in CATEGORY_COLUMNS:
        complete &= frame[col].str.strip() != ""
    for col in CATEGORY_COLUMNS:
        frame[col] = frame[col].where(complete, None)

    log = InteractionLog(_sort_chronologically(_coerce_types(frame)))
    logger.info(
        "interactions loaded",
        path=str(path),
        rows=len(log),
        users=log.user_count,
        items=log.item_count,
    )
    return log


def write_interactions(log: InteractionLog, path: Union[str, Path], delimiter: str = ","):
    """Write ``log`` in the layout load_interactions reads"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    log.frame[COLUMNS].to_csv(path, sep=delimiter, index=False, na_rep="", lineterminator="\n")
    logger.info("interactions written", path=str(path), rows=len(log))
    return path


def label_feedback(log: InteractionLog, pos_ratio: float = 0.5, neg_seconds: float = 3.0) -> InteractionLog:
    """
    Label every interaction as positive, passive-negative or discard

    Positive iff watch >= pos_ratio * duration; passive-negative iff the watch
    is shorter than ``neg_seconds`` and not positive; everything else is
    the gray zone and gets discarded later.
    """
    if pos_ratio < 0 or neg_seconds < 0:
        raise ContractError("label thresholds must be nonnegative")
    frame = log.frame.copy()
    watch = frame["watch_seconds"].to_numpy()
    positive = watch >= pos_ratio * frame["video_seconds"].to_numpy()
    negative = ~positive & (watch < neg_seconds)
    frame["label"] = np.where(
        positive,
        FeedbackLabel.POSITIVE.value,
        np.where(negative, FeedbackLabel.PASSIVE_NEGATIVE.value, FeedbackLabel.DISCARD.value),
    )
    counts = frame["label"].value_counts()
    logger.info(
        "feedback labeled",
        positive=int(counts.get(FeedbackLabel.POSITIVE.value, 0)),
        passive_negative=int(counts.get(FeedbackLabel.PASSIVE_NEGATIVE.value, 0)),
        discard=int(counts.get(FeedbackLabel.DISCARD.value, 0)),
    )
    return InteractionLog(frame)


def drop_discarded(log: InteractionLog) -> InteractionLog:
    if not log.is_labeled:
        raise ContractError("drop_discarded needs a labeled log")
    frame = log.frame[log.frame["label"] != FeedbackLabel.DISCARD.value]
    return InteractionLog(frame.reset_index(drop=True))


def apply_n_core(log: InteractionLog, n: int = 10) -> InteractionLog:
    """
    Iteratively drop users and items with fewer than ``n`` interactions

    Every row counts, so run it after discarding gray-zone rows. The result
    is the largest sub-log in which each user and item has >= n rows.
    """
    if n < 1:
        raise ContractError(f"n-core needs n >= 1, got {n}")
    frame = log.frame
    rounds = 0
    while len(frame):
        user_counts = frame["user_id"].map(frame["user_id"].value_counts())
        item_counts = frame["item_id"].map(frame["item_id"].value_counts())
        keep = (user_counts >= n) & (item_counts >= n)
        if keep.all():
            break
        frame = frame[keep]
        rounds += 1

    result = InteractionLog(frame.reset_index(drop=True))
    if len(result) == 0:
        logger.warning("n-core filtering left an empty log", n=n, input_rows=len(log))
    else:
        logger.info(
            "n-core applied",
            n=n,
            rounds=rounds,
            rows=len(result),
            users=result.user_count,
            items=result.item_count,
        )
    return result


class DatasetStatistics(BaseModel):
    users: int
    items: int
    instances: int
    positive: int
    negative: int
    discarded: int
    average_length: float


def dataset_statistics(log: InteractionLog) -> DatasetStatistics:
    """Users, items and feedback counts, as reported for a prepared dataset"""
    frame = log.frame
    labels = frame["label"] if log.is_labeled else pd.Series([], dtype=object)
    positive = int((labels == FeedbackLabel.POSITIVE.value).sum())
    negative = int((labels == FeedbackLabel.PASSIVE_NEGATIVE.value).sum())
    discarded = int((labels == FeedbackLabel.DISCARD.value).sum())
    instances = len(frame) - discarded
    users = log.user_count
    return DatasetStatistics(
        users=users,
        items=log.item_count,
        instances=instances,
        positive=positive,
        negative=negative,
        discarded=discarded,
        average_length=instances / users if users else 0.0,
    )


def feedback_distribution(log: InteractionLog) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Per-user and per-item counts of positive and passive-negative feedback

    Returns:
        (per_user, per_item) frames indexed by id with columns
        ``positive`` and ``passive_negative``
    """
    if not log.is_labeled:
        raise ContractError("feedback_distribution needs a labeled log")
    frame = log.frame[log.frame["label"] != FeedbackLabel.DISCARD.value]
    wanted = [FeedbackLabel.POSITIVE.value, FeedbackLabel.PASSIVE_NEGATIVE.value]

    def _count(key: str) -> pd.DataFrame:
        table = pd.crosstab(frame[key], frame["label"]).reindex(columns=wanted, fill_value=0)
        table.columns = ["positive", "passive_negative"]
        return table

    return _count("user_id"), _count("item_id")
