"""
Objective
Pair sampling, BPR and distance-correlation losses, Adam and the epoch loop.

Two pair sets feed the joint loss: O1 pairs a positive with a random item
the user never touched, O2 pairs it with the user's passive negative that
is nearest in time. Every positive at encoder position t >= 1 is predicted
from the encoder output at t - 1.
"""

from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Collection, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.special import expit

from diffkit import Grads
from errors import ContractError, DegeneracyError, NumericError, SamplingError, TrainingDivergedError
from evaluator import EvalConfig, evaluate_model
from sequences import SequenceDataset, UserSequence
from sine_model import ModelConfig, ModelParams, SineModel
from training_log import EpochRecord, TrainingLog

logger = structlog.get_logger(__name__)

LAMBDA_TOLERANCE = 1e-12


class TrainConfig(BaseModel):
    lambda1: float = Field(0.6, ge=0.0)
    lambda2: float = Field(0.3, ge=0.0)
    lambda3: float = Field(0.1, ge=0.0)
    learning_rate: float = Field(0.003, gt=0.0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(100, ge=0)
    patience: int = Field(5, ge=1)
    seed: int = 2023
    neg_samples_per_pos: int = Field(1, ge=1)
    # share of O1 negatives replaced by the user's passive negatives (SASRec-N)
    neg_mix: float = Field(0.0, ge=0.0, le=1.0)
    # +1 minimizes prototype dCor, -1 maximizes it
    dis_sign: int = 1
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    restore_best: bool = True

    @field_validator("dis_sign")
    @classmethod
    def _unit_sign(cls, value: int) -> int:
        if value not in (1, -1):
            raise ValueError(f"dis_sign must be 1 or -1, got {value}")
        return value

    @model_validator(mode="after")
    def _lambdas_sum_to_one(self):
        total = self.lambda1 + self.lambda2 + self.lambda3
        if abs(total - 1.0) > LAMBDA_TOLERANCE:
            raise ValueError(f"lambda1 + lambda2 + lambda3 must equal 1, got {total!r}")
        return self

    def effective_lambdas(self, ablate_negative_feedback: bool = False) -> Tuple[float, float, float]:
        """Loss weights; without negative feedback L2's weight moves to L1"""
        if ablate_negative_feedback:
            return self.lambda1 + self.lambda2, 0.0, self.lambda3
        return self.lambda1, self.lambda2, self.lambda3


class PairKind(str, Enum):
    O1_RANDOM = "O1_random"
    O2_OBSERVED = "O2_observed"


@dataclass(frozen=True)
class TrainingPair:
    user: str
    positive: int
    negative: int
    kind: PairKind


def sample_o1(
    user: str,
    positive: int,
    observed: Collection[int],
    n_items: int,
    rng: np.random.Generator,
) -> TrainingPair:
    """Uniform draw over items the user never interacted with (rejection sampling)"""
    observed = observed if isinstance(observed, (set, frozenset)) else set(observed)
    if len(observed) >= n_items:
        raise SamplingError(f"user {user} has interacted with every item")
    while True:
        j = int(rng.integers(n_items))
        if j not in observed:
            return TrainingPair(user, positive, j, PairKind.O1_RANDOM)


def sample_o2(
    user: str,
    positive: int,
    positive_time: int,
    negatives: Sequence[Tuple[int, int]],
) -> Optional[TrainingPair]:
    """
    Pair a positive with the passive negative nearest to it in time

    Args:
        negatives: (item, timestamp) of the user's passive negatives

    Returns:
        None when the user has no passive negative; equal distances go to
        the earlier negative
    """
    if not negatives:
        return None
    item, _ = min(negatives, key=lambda neg: (abs(neg[1] - positive_time), neg[1]))
    return TrainingPair(user, positive, int(item), PairKind.O2_OBSERVED)


def bpr_loss(pos_scores, neg_scores) -> float:
    """Mean of -ln sigma(y_i - y_j) over pairs, overflow-free"""
    gaps = np.asarray(pos_scores, dtype=np.float64) - np.asarray(neg_scores, dtype=np.float64)
    if gaps.size == 0:
        return 0.0
    return float(np.mean(np.logaddexp(0.0, -gaps)))


def _centered_distances(x: np.ndarray) -> np.ndarray:
    a = np.abs(x[:, None] - x[None, :])
    return a - a.mean(axis=0, keepdims=True) - a.mean(axis=1, keepdims=True) + a.mean()


def _pair_dcor(x: np.ndarray, y: np.ndarray, with_grad: bool):
    n = len(x)
    a, b = _centered_distances(x), _centered_distances(y)
    v_xy = (a * b).mean()
    v_xx = (a * a).mean()
    v_yy = (b * b).mean()
    if v_xx <= 0.0 or v_yy <= 0.0:
        raise DegeneracyError("distance correlation of a constant prototype")
    r = max(v_xy, 0.0) / np.sqrt(v_xx * v_yy)
    value = float(np.sqrt(r))
    if not with_grad:
        return value, None, None
    if r < 1e-15:
        return value, np.zeros(n), np.zeros(n)

    # d value / d V for V in (v_xy, v_xx, v_yy)
    outer = 0.5 / value
    d_xy = outer / np.sqrt(v_xx * v_yy)
    d_xx = -outer * 0.5 * r / v_xx
    d_yy = -outer * 0.5 * r / v_yy
    # the centered matrices are projections, so dV_xy/da = B/n^2 and dV_xx/da = 2A/n^2
    g_x = (d_xy * b + 2.0 * d_xx * a) / (n * n)
    g_y = (d_xy * a + 2.0 * d_yy * b) / (n * n)

    def through_abs(g, v):
        return 2.0 * (g * np.sign(v[:, None] - v[None, :])).sum(axis=1)

    return value, through_abs(g_x, x), through_abs(g_y, y)


def _check_prototypes(prototypes: np.ndarray):
    k, d = prototypes.shape
    if k < 2 or d < 2:
        raise ContractError(f"distance correlation needs K >= 2 and D >= 2, got {k}x{d}")


def distance_correlation(prototypes: np.ndarray) -> float:
    """
    Mean pairwise dCor between prototypes

    Each prototype is read as D scalar samples. 1 for affinely related
    prototypes, near 0 for independent ones.
    """
    prototypes = np.asarray(prototypes, dtype=np.float64)
    _check_prototypes(prototypes)
    values = [_pair_dcor(prototypes[i], prototypes[j], False)[0] for i, j in combinations(range(len(prototypes)), 2)]
    return float(np.mean(values))


def distance_correlation_grad(prototypes: np.ndarray) -> Tuple[float, np.ndarray]:
    """distance_correlation and its gradient w.r.t. the prototypes"""
    prototypes = np.asarray(prototypes, dtype=np.float64)
    _check_prototypes(prototypes)
    pairs = list(combinations(range(len(prototypes)), 2))
    grad = np.zeros_like(prototypes)
    total = 0.0
    for i, j in pairs:
        value, gi, gj = _pair_dcor(prototypes[i], prototypes[j], True)
        total += value
        grad[i] += gi
        grad[j] += gj
    return total / len(pairs), grad / len(pairs)


def joint_loss(l1: float, l2: float, l_dis: float, config: TrainConfig, ablate_negative_feedback: bool = False) -> float:
    lam1, lam2, lam3 = config.effective_lambdas(ablate_negative_feedback)
    return lam1 * l1 + lam2 * l2 + config.dis_sign * lam3 * l_dis


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Grads,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    frozen: Collection[str] = (),
) -> Dict[str, np.ndarray]:
    """One bias-corrected Adam update, in place; ``frozen`` names are left untouched"""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    step_size = lr / bc1

    for name, value in params.items():
        if name in frozen:
            continue
        g = grads[name]
        if g.shape != value.shape:
            raise ContractError(f"gradient shape {g.shape} does not match '{name}' {value.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        m, v = state.m[name], state.v[name]
        if m.shape != value.shape:
            raise ContractError(f"optimizer state for '{name}' has shape {m.shape}, expected {value.shape}")

        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        value -= step_size * m / (np.sqrt(v / bc2) + eps)
    return params


class Adam:
    """Adam over a ModelParams tape"""

    def __init__(self, config: TrainConfig, frozen: Collection[str] = ()):
        self.config = config
        self.frozen = frozenset(frozen)
        self.state = AdamState()

    def step(self, params: ModelParams):
        cfg = self.config
        adam_step(
            params.params,
            params.grads,
            self.state,
            cfg.learning_rate,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
            self.frozen,
        )


@dataclass
class UserBatch:
    """Encoder input of one user and the pairs it contributes to each loss"""

    user_id: str
    items: np.ndarray
    positive_mask: np.ndarray
    l1_pairs: List[TrainingPair] = field(default_factory=list)
    l1_queries: List[int] = field(default_factory=list)
    l2_pairs: List[TrainingPair] = field(default_factory=list)
    l2_queries: List[int] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.l1_pairs or self.l2_pairs)


def build_user_batch(
    model: SineModel,
    seq: UserSequence,
    config: TrainConfig,
    rng: np.random.Generator,
) -> UserBatch:
    """Sample the O1/O2 pairs of one user's training portion"""
    mask = seq.positive_mask()
    items = np.asarray(seq.items, dtype=np.int64)
    times = np.asarray(seq.timestamps, dtype=np.int64)
    keep = np.arange(len(items)) if model.config.uses_negatives else np.flatnonzero(mask)
    batch = UserBatch(seq.user_id, items[keep], mask[keep])

    negatives = [(int(items[j]), int(times[j])) for j in np.flatnonzero(~mask)]
    observed = set(seq.observed_items)
    _, lam2, _ = config.effective_lambdas(model.config.ablate_negative_feedback)

    for t in range(1, len(keep)):
        if not batch.positive_mask[t]:
            continue
        positive = int(batch.items[t])
        for _ in range(config.neg_samples_per_pos):
            pair = sample_o1(seq.user_id, positive, observed, model.n_items, rng)
            if config.neg_mix > 0.0 and negatives and rng.random() < config.neg_mix:
                neg_item = negatives[int(rng.integers(len(negatives)))][0]
                pair = TrainingPair(seq.user_id, positive, neg_item, PairKind.O2_OBSERVED)
            batch.l1_pairs.append(pair)
            batch.l1_queries.append(t - 1)
        if lam2 > 0.0:
            pair = sample_o2(seq.user_id, positive, int(times[keep[t]]), negatives)
            if pair is not None:
                batch.l2_pairs.append(pair)
                batch.l2_queries.append(t - 1)
    return batch


@dataclass
class LossBreakdown:
    l1: float
    l2: float
    l_dis: float
    joint: float
    n_o1: int
    n_o2: int


def loss_and_grad(model: SineModel, batches: List[UserBatch], config: TrainConfig) -> Tuple[LossBreakdown, Grads]:
    """
    Joint loss of a batch and its gradient

    Gradients land in ``model.params.grads`` (zeroed first), which is also
    what gets returned.
    """
    mcfg = model.config
    lam1, lam2, lam3 = config.effective_lambdas(mcfg.ablate_negative_feedback)
    n1 = sum(len(b.l1_pairs) for b in batches)
    n2 = sum(len(b.l2_pairs) for b in batches)
    w1 = lam1 / n1 if n1 else 0.0
    w2 = lam2 / n2 if n2 else 0.0

    model.params.zero_grad()
    l1_sum = 0.0
    l2_sum = 0.0
    for b in batches:
        if b.empty:
            continue
        trace = model.trace(b.items, b.positive_mask)
        m1, m2 = len(b.l1_pairs), len(b.l2_pairs)
        queries = np.array(b.l1_queries + b.l1_queries + b.l2_queries + b.l2_queries, dtype=np.int64)
        targets = np.array(
            [p.positive for p in b.l1_pairs]
            + [p.negative for p in b.l1_pairs]
            + [p.positive for p in b.l2_pairs]
            + [p.negative for p in b.l2_pairs],
            dtype=np.int64,
        )
        scores, cache = model.score_rows(trace.output[queries], targets, trace.active[queries])
        gap1 = scores[:m1] - scores[m1 : 2 * m1]
        gap2 = scores[2 * m1 : 2 * m1 + m2] - scores[2 * m1 + m2 :]
        l1_sum += float(np.logaddexp(0.0, -gap1).sum())
        l2_sum += float(np.logaddexp(0.0, -gap2).sum())

        dgap1 = -expit(-gap1) * w1
        dgap2 = -expit(-gap2) * w2
        dscores = np.concatenate([dgap1, -dgap1, dgap2, -dgap2])
        dquery = model.score_rows_backward(dscores, cache)
        dout = np.zeros_like(trace.output)
        np.add.at(dout, queries, dquery)
        model.trace_backward(trace, dout)

    l1 = l1_sum / n1 if n1 else 0.0
    l2 = l2_sum / n2 if n2 else 0.0
    l_dis = 0.0
    if mcfg.architecture == "sine" and mcfg.n_interests >= 2 and lam3 > 0.0:
        l_dis, dz = distance_correlation_grad(model.params["prototypes"])
        model.params.accumulate("prototypes", config.dis_sign * lam3 * dz)

    joint = joint_loss(l1, l2, l_dis, config, mcfg.ablate_negative_feedback)
    return LossBreakdown(l1, l2, l_dis, joint, n1, n2), model.params.grads


@dataclass
class TrainResult:
    model: SineModel
    history: List[EpochRecord]
    best_epoch: Optional[int]
    best_val_gauc: Optional[float]
    stopped_early: bool = False

    @property
    def params(self) -> ModelParams:
        return self.model.params


def _diagnostics(
    model: SineModel, breakdown: Optional[LossBreakdown], epoch: int, batch: Optional[int], users: List[str]
) -> Dict:
    losses = {
        "l1": breakdown.l1 if breakdown else None,
        "l2": breakdown.l2 if breakdown else None,
        "l_dis": breakdown.l_dis if breakdown else None,
    }
    return {
        "epoch": epoch,
        "batch": batch,
        "users": users,
        **losses,
        "grad_max_abs": {name: float(np.max(np.abs(g))) if g.size else 0.0 for name, g in model.params.grads.items()},
        "param_max_abs": {name: float(np.max(np.abs(p))) if p.size else 0.0 for name, p in model.params.params.items()},
    }


def _diverged(
    model: SineModel,
    breakdown: Optional[LossBreakdown],
    epoch: int,
    batch: Optional[int],
    users: List[str],
    reason: str,
) -> TrainingDivergedError:
    diagnostics = _diagnostics(model, breakdown, epoch, batch, users)
    where = f"epoch {epoch}, batch {batch}" if batch is not None else f"validation after epoch {epoch}"
    logger.error("training diverged", reason=reason, **{k: v for k, v in diagnostics.items() if k != "users"})
    return TrainingDivergedError(f"{reason} at {where}", diagnostics)


def train(
    dataset: SequenceDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    eval_config: Optional[EvalConfig] = None,
    log: Optional[TrainingLog] = None,
) -> TrainResult:
    """
    Fit a model with the joint objective and validation-GAUC early stopping

    Args:
        dataset: sequences to train on, targets for validation
        model_config: architecture and encoder settings
        train_config: loss weights, optimizer and stopping settings
        eval_config: validation candidate construction
        log: receives one EpochRecord per epoch

    Returns:
        TrainResult holding the best (or last) parameters and the history

    Raises:
        ContractError: empty dataset or sequences longer than max_len
        TrainingDivergedError: the joint loss or a forward pass went non-finite
    """
    if not dataset.sequences:
        raise ContractError("cannot train on an empty dataset")
    if dataset.max_len > model_config.max_len:
        raise ContractError(f"dataset max_len {dataset.max_len} exceeds model max_len {model_config.max_len}")

    eval_config = eval_config or EvalConfig()
    model = SineModel.initialize(model_config, dataset.n_items)
    rng = np.random.Generator(np.random.Philox(train_config.seed))
    optimizer = Adam(train_config, frozen={"prototypes"} if model_config.freeze_prototypes else ())

    history: List[EpochRecord] = []
    best_gauc: Optional[float] = None
    best_epoch: Optional[int] = None
    best_params = model.params.copy()
    stale = 0
    stopped_early = False
    n_users = len(dataset.sequences)

    logger.info(
        "training started",
        users=n_users,
        items=dataset.n_items,
        architecture=model_config.architecture,
        n_interests=model_config.n_interests,
        epochs=train_config.epochs,
    )
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(n_users)
        sums = np.zeros(4)
        n_batches = 0
        for b, start in enumerate(range(0, n_users, train_config.batch_size)):
            seqs = [dataset.sequences[i] for i in order[start : start + train_config.batch_size]]
            users = [s.user_id for s in seqs]
            batches = [build_user_batch(model, seq, train_config, rng) for seq in seqs]
            if all(batch.empty for batch in batches):
                continue
            try:
                breakdown, _ = loss_and_grad(model, batches, train_config)
            except NumericError as e:
                raise _diverged(model, None, epoch, b, users, str(e)) from e
            if not np.isfinite(breakdown.joint):
                raise _diverged(model, breakdown, epoch, b, users, "non-finite loss")
            optimizer.step(model.params)
            sums += (breakdown.l1, breakdown.l2, breakdown.l_dis, breakdown.joint)
            n_batches += 1

        means = sums / max(n_batches, 1)
        try:
            val_gauc = evaluate_model(model, dataset, "val", eval_config).gauc
        except NumericError as e:
            raise _diverged(model, None, epoch, None, [], str(e)) from e
        record = EpochRecord(
            epoch=epoch,
            l1=float(means[0]),
            l2=float(means[1]),
            l_dis=float(means[2]),
            joint=float(means[3]),
            val_gauc=val_gauc,
        )
        history.append(record)
        if log is not None:
            log.append(record)
        logger.info("epoch finished", epoch=epoch, joint=record.joint, val_gauc=val_gauc)

        if best_gauc is None or val_gauc > best_gauc:
            best_gauc, best_epoch, stale = val_gauc, epoch, 0
            best_params = model.params.copy()
        else:
            stale += 1
            if stale >= train_config.patience:
                stopped_early = True
                logger.info("early stopping", epoch=epoch, best_epoch=best_epoch, best_val_gauc=best_gauc)
                break

    if train_config.restore_best and best_epoch is not None:
        model = SineModel(model_config, best_params)
    return TrainResult(model, history, best_epoch, best_gauc, stopped_early)
