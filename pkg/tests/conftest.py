"""
Shared fixtures: hand-built logs, micro model configs and a small synthetic world
"""

import sys
from pathlib import Path

import numpy as np
import pytest
import structlog

# Add src directory to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from interactions import FeedbackLabel, InteractionLog, label_feedback  # noqa: E402
from sequences import UserSequence, build_sequences  # noqa: E402
from sine_model import ModelConfig  # noqa: E402
from synthworld import SynthConfig, generate  # noqa: E402

POS = FeedbackLabel.POSITIVE
NEG = FeedbackLabel.PASSIVE_NEGATIVE


def watch_row(user, item, ts, watch, video=60.0, cats=(None, None, None)):
    return {
        "user_id": user,
        "item_id": item,
        "timestamp": ts,
        "watch_seconds": watch,
        "video_seconds": video,
        "cat_l1": cats[0],
        "cat_l2": cats[1],
        "cat_l3": cats[2],
    }


def make_log(rows) -> InteractionLog:
    return InteractionLog.from_records(rows)


def make_sequence(user_id, items, labels, observed=None, val_target=None, test_target=None) -> UserSequence:
    n = len(items)
    return UserSequence(
        user_id=user_id,
        items=list(items),
        labels=list(labels),
        timestamps=[100 * (i + 1) for i in range(n)],
        val_target=items[-1] if val_target is None else val_target,
        val_timestamp=100 * (n + 1),
        test_target=items[-1] if test_target is None else test_target,
        test_timestamp=100 * (n + 2),
        observed_items=sorted(set(items)) if observed is None else observed,
    )


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(7))


@pytest.fixture
def micro_config():
    return ModelConfig(dim=8, n_interests=3, max_len=6, init_seed=11)


@pytest.fixture
def mixed_sequences():
    """Two users over a 10-item catalog, positives and passive negatives interleaved"""
    return [
        make_sequence("u0", [0, 1, 2, 3, 4, 5], [POS, NEG, POS, POS, NEG, POS]),
        make_sequence("u1", [6, 7, 8, 1, 9, 2], [NEG, POS, POS, NEG, POS, POS]),
    ]


@pytest.fixture(scope="session")
def small_world():
    config = SynthConfig(n_users=40, n_items=60, dim=8, session_len=10, sessions_per_user=3, seed=11)
    return generate(config)


@pytest.fixture(scope="session")
def small_dataset(small_world):
    log, _ = small_world
    return build_sequences(label_feedback(log), max_len=20)


@pytest.fixture(autouse=True)
def reset_logging():
    yield
    structlog.reset_defaults()
