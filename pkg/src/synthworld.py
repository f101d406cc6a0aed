"""
Synthworld
Synthetic watch logs planted from a known multi-aspect user model
"""

from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field, model_validator

from interactions import CategoryTriple, InteractionLog, write_interactions

logger = structlog.get_logger(__name__)

SESSION_GAP_SECONDS = 3600
START_TIMESTAMP = 1_600_000_000


class SynthConfig(BaseModel):
    """
    Generator settings

    Items live in cells (aspect, level2, level3, hidden). Level 1 of the
    category tree is the aspect; the hidden factor never reaches the CSV.
    """

    n_users: int = Field(500, ge=0)
    n_items: int = Field(600, ge=1)
    k_true: int = Field(3, ge=1)
    dim: int = Field(16, ge=1)
    session_len: int = Field(12, ge=1)
    sessions_per_user: int = Field(4, ge=1)
    skip_noise: float = Field(0.05, ge=0.0, le=1.0)
    seed: int = 2023
    n_l2: int = Field(3, ge=1)
    n_l3: int = Field(3, ge=1)
    n_hidden_levels: int = Field(3, ge=1)
    aspects_per_user: int = Field(3, ge=1)
    # chance that a positive redraws its aspect among the user's aspects
    switch_rate: float = Field(0.8, ge=0.0, le=1.0)
    discard_rate: float = Field(0.05, ge=0.0, le=1.0)
    match_rate: float = Field(0.55, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _enough_items(self):
        if self.n_items < self.k_true:
            raise ValueError(f"n_items={self.n_items} is smaller than k_true={self.k_true}")
        return self

    @property
    def factors_per_aspect(self) -> int:
        return self.n_l2 * self.n_l3 * self.n_hidden_levels


class ItemTruth(BaseModel):
    item_id: str
    aspect: int
    level2: int
    level3: int
    hidden: int
    category: CategoryTriple

    @property
    def factors(self) -> Tuple[int, int, int]:
        return (self.level2, self.level3, self.hidden)


class UserTruth(BaseModel):
    user_id: str
    aspects: List[int]
    # tastes[i] is the (level2, level3, hidden) cell the user likes within aspects[i]
    tastes: List[List[int]]
    schedule: List[int]


class GroundTruth(BaseModel):
    config: SynthConfig
    aspect_vectors: List[List[float]]
    items: List[ItemTruth]
    users: List[UserTruth]

    @property
    def item_aspects(self) -> Dict[str, int]:
        return {item.item_id: item.aspect for item in self.items}

    @property
    def user_schedules(self) -> Dict[str, List[int]]:
        return {user.user_id: user.schedule for user in self.users}


def _aspect_vectors(rng: np.random.Generator, k: int, dim: int) -> np.ndarray:
    raw = rng.standard_normal((k, dim))
    if k <= dim:
        # QR on the transpose is Gram-Schmidt over the rows
        q, r = np.linalg.qr(raw.T)
        return (q * np.sign(np.diag(r))).T
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _category(aspect: int, level2: int, level3: int) -> CategoryTriple:
    return CategoryTriple(
        level1=f"c{aspect}",
        level2=f"c{aspect}.{level2}",
        level3=f"c{aspect}.{level2}.{level3}",
    )


def _catalog(config: SynthConfig, rng: np.random.Generator) -> List[ItemTruth]:
    cells = [
        (l2, l3, h)
        for l2 in range(config.n_l2)
        for l3 in range(config.n_l3)
        for h in range(config.n_hidden_levels)
    ]
    orders = [rng.permutation(len(cells)) for _ in range(config.k_true)]
    items = []
    for j in range(config.n_items):
        aspect = j % config.k_true
        slot = (j // config.k_true) % len(cells)
        l2, l3, h = cells[orders[aspect][slot]]
        items.append(
            ItemTruth(
                item_id=f"i{j:05d}",
                aspect=aspect,
                level2=l2,
                level3=l3,
                hidden=h,
                category=_category(aspect, l2, l3),
            )
        )
    return items


def _mismatch_count(a: Tuple[int, int, int], b: Tuple[int, int, int]) -> int:
    return sum(x != y for x, y in zip(a, b))


class _Catalog:
    """Index of the item cells used while drawing sessions"""

    def __init__(self, items: List[ItemTruth]):
        self.items = items
        self.by_aspect: Dict[int, List[int]] = {}
        self.by_cell: Dict[Tuple[int, Tuple[int, int, int]], List[int]] = {}
        for idx, item in enumerate(items):
            self.by_aspect.setdefault(item.aspect, []).append(idx)
            self.by_cell.setdefault((item.aspect, item.factors), []).append(idx)

    def cells_of(self, aspect: int) -> List[Tuple[int, int, int]]:
        return sorted(cell for a, cell in self.by_cell if a == aspect)

    def outside(self, aspect: int) -> List[int]:
        return [i for a, members in sorted(self.by_aspect.items()) if a != aspect for i in members]

    def near_misses(self, aspect: int, taste: Tuple[int, int, int]) -> List[int]:
        """Items of ``aspect`` off the user's taste in exactly one factor"""
        out = []
        for (a, cell), members in self.by_cell.items():
            if a == aspect and _mismatch_count(cell, taste) == 1:
                out.extend(members)
        return sorted(out)


class _OffCategoryQuota:
    """Turns every skip whose running share would reach ``rate`` off-category"""

    def __init__(self, rate: float):
        self.rate = rate
        self.owed = 0.0

    def next_is_off_category(self) -> bool:
        self.owed += self.rate
        if self.owed >= 1.0:
            self.owed -= 1.0
            return True
        return False


def _session_events(
    config: SynthConfig,
    catalog: _Catalog,
    aspects: List[int],
    tastes: List[Tuple[int, int, int]],
    slot: int,
    quota: _OffCategoryQuota,
    rng: np.random.Generator,
) -> List[Tuple[str, int]]:
    """
    One session as (kind, item index) events

    Positives start on the session's aspect and redraw it among the user's
    aspects at ``switch_rate``. Skips only sit between two positives of the
    same aspect, at most one per gap; skips with no such gap left are not
    emitted.
    """
    n_discards = n_negatives = 0
    positive_slots: List[int] = []
    current = slot
    for _ in range(config.session_len):
        u = rng.random()
        if u < config.discard_rate:
            n_discards += 1
        elif rng.random() < config.match_rate:
            if positive_slots and rng.random() < config.switch_rate:
                current = int(rng.integers(len(aspects)))
            positive_slots.append(current)
        else:
            n_negatives += 1

    events: List[Tuple[str, int]] = []
    for s in positive_slots:
        matches = catalog.by_cell[(aspects[s], tastes[s])]
        events.append(("positive", matches[rng.integers(len(matches))]))

    gaps = [g for g in range(1, len(positive_slots)) if positive_slots[g - 1] == positive_slots[g]]
    chosen = sorted(rng.permutation(gaps)[: min(n_negatives, len(gaps))].tolist(), reverse=True)
    for g in chosen:
        s = positive_slots[g]
        aspect = aspects[s]
        misses = catalog.near_misses(aspect, tastes[s])
        if not misses:
            continue
        others = catalog.outside(aspect)
        pool = others if others and quota.next_is_off_category() else misses
        events.insert(g, ("negative", pool[rng.integers(len(pool))]))

    own = catalog.by_aspect[aspects[slot]]
    for _ in range(n_discards):
        events.insert(int(rng.integers(len(events) + 1)), ("discard", own[rng.integers(len(own))]))
    return events


def _draw_user(
    config: SynthConfig,
    catalog: _Catalog,
    aspect_vectors: np.ndarray,
    quota: _OffCategoryQuota,
    rng: np.random.Generator,
    user_idx: int,
) -> Tuple[UserTruth, List[dict]]:
    k = config.k_true
    preference = rng.standard_normal(config.dim)
    logits = aspect_vectors @ preference
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    n_aspects = min(config.aspects_per_user, k)
    aspects = sorted(int(a) for a in rng.choice(k, size=n_aspects, replace=False, p=probs))
    tastes = []
    for a in aspects:
        cells = catalog.cells_of(a)
        tastes.append(cells[rng.integers(len(cells))])

    weights = probs[aspects] / probs[aspects].sum()
    schedule = [int(rng.choice(len(aspects), p=weights)) for _ in range(config.sessions_per_user)]
    user_id = f"u{user_idx:05d}"

    records: List[dict] = []
    clock = START_TIMESTAMP + user_idx * 10_000_000
    for slot in schedule:
        for kind, item_idx in _session_events(config, catalog, aspects, tastes, slot, quota, rng):
            clock += int(rng.integers(5, 120))
            video = round(float(rng.uniform(10.0, 120.0)), 3)
            if kind == "positive":
                watch = video * rng.uniform(0.55, 1.0)
            elif kind == "negative":
                watch = rng.uniform(0.0, 2.9)
            else:
                watch = rng.uniform(3.5, 0.45 * video)
            category = catalog.items[item_idx].category
            records.append(
                {
                    "user_id": user_id,
                    "item_id": catalog.items[item_idx].item_id,
                    "timestamp": clock,
                    "watch_seconds": round(float(watch), 3),
                    "video_seconds": video,
                    "cat_l1": category.level1,
                    "cat_l2": category.level2,
                    "cat_l3": category.level3,
                }
            )
        clock += SESSION_GAP_SECONDS

    truth = UserTruth(
        user_id=user_id,
        aspects=aspects,
        tastes=[list(t) for t in tastes],
        schedule=[aspects[s] for s in schedule],
    )
    return truth, records


def generate(config: SynthConfig) -> Tuple[InteractionLog, GroundTruth]:
    """
    Generate an unlabeled watch log and the truth it was drawn from

    Per session with active aspect a: items in the user's taste cell of a
    are watched (positive), items of a off by one factor are skipped
    (passive negative) and a few gray-zone watches are mixed in. A
    ``skip_noise`` share of all skips, counted over the whole world, comes
    from other aspects instead. Every skip sits between two positives of
    one session and one aspect, so positive/skip neighbours share level 1
    at a rate of at least ``1 - skip_noise``.

    Args:
        config: generator settings

    Returns:
        (InteractionLog, GroundTruth), identical for identical configs
    """
    rng = np.random.Generator(np.random.Philox(config.seed))
    aspect_vectors = _aspect_vectors(rng, config.k_true, config.dim)
    items = _catalog(config, rng)
    catalog = _Catalog(items)
    quota = _OffCategoryQuota(config.skip_noise)

    users: List[UserTruth] = []
    records: List[dict] = []
    for u in range(config.n_users):
        truth, rows = _draw_user(config, catalog, aspect_vectors, quota, rng, u)
        users.append(truth)
        records.extend(rows)

    log = InteractionLog.from_records(records) if records else InteractionLog.empty()
    truth = GroundTruth(
        config=config,
        aspect_vectors=aspect_vectors.tolist(),
        items=items,
        users=users,
    )
    logger.info(
        "synthetic world generated",
        users=config.n_users,
        items=config.n_items,
        k_true=config.k_true,
        rows=len(log),
        seed=config.seed,
    )
    return log, truth


def export_ground_truth(truth: GroundTruth, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(truth.model_dump_json(indent=2) + "\n")
    return path


def import_ground_truth(path: Union[str, Path]) -> GroundTruth:
    return GroundTruth.model_validate_json(Path(path).read_text())


def write_synthetic(config: SynthConfig, directory: Union[str, Path]) -> Tuple[Path, Path]:
    """Generate a world and write ``interactions.csv`` plus ``ground_truth.json``"""
    log, truth = generate(config)
    directory = Path(directory)
    csv_path = write_interactions(log, directory / "interactions.csv")
    truth_path = export_ground_truth(truth, directory / "ground_truth.json")
    return csv_path, truth_path
