"""
SINE Model
Sub-interest sequential recommender over mixed positive / passive-negative
sequences, plus the SASRec baseline it degenerates to.

Pipeline per sequence: assign every position to a prototype, encode with
self-attention whose weights are scaled by beta (beta1 when the key shares
the active sub-interest, beta2 = 1 - beta1 otherwise), project the encoder
output onto every prototype and fuse the K projections with target-aware
weights when scoring an item.

Argmax selections (sub-interest assignment and the active sub-interest) are
constants for the backward pass; prototypes receive gradient only through
the projection gate and the disentanglement loss.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field, model_validator

from diffkit import (
    ParamTape,
    ensure_finite,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    logistic,
    relu,
    relu_backward,
    softmax_rows,
    softmax_rows_backward,
)
from errors import ContractError, SchemaError, VocabularyError
from sequences import UserSequence

logger = structlog.get_logger(__name__)

CHECKPOINT_VERSION = 1

BLOCK_PARAMS = ("wq", "wk", "wv", "ln_gain", "ln_bias", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2")


class ModelConfig(BaseModel):
    architecture: Literal["sine", "sasrec"] = "sine"
    dim: int = Field(50, ge=2)
    n_interests: int = Field(2, ge=1)
    max_len: int = Field(50, ge=1)
    beta1: float = Field(0.7, ge=0.0, le=1.0)
    n_heads: int = Field(1, ge=1)
    n_blocks: int = Field(1, ge=1)
    causal_mask: bool = True
    ablate_adaptive_fusion: bool = False
    ablate_negative_feedback: bool = False
    recent_neg_window: int = Field(5, ge=1)
    # scalar reading of the projection gate: sigma(<o, z_k>) instead of sigma(o * z_k)
    scalar_gate: bool = False
    # False: every query uses the sub-interest of the last positive of the whole input
    causal_active_interest: bool = True
    freeze_prototypes: bool = False
    ln_eps: float = Field(1e-8, gt=0.0)
    init_seed: int = 2023

    @model_validator(mode="after")
    def _consistent(self):
        if self.dim % self.n_heads:
            raise ValueError(f"dim={self.dim} is not divisible by n_heads={self.n_heads}")
        if self.architecture == "sasrec":
            if self.n_interests != 1:
                raise ValueError("sasrec architecture needs n_interests=1")
            if not self.ablate_negative_feedback:
                raise ValueError("sasrec architecture encodes positives only (ablate_negative_feedback)")
        return self

    @property
    def beta2(self) -> float:
        return 1.0 - self.beta1

    @property
    def uses_negatives(self) -> bool:
        return not self.ablate_negative_feedback


class ModelParams(ParamTape):
    """Every trainable tensor of the model, keyed by name"""

    @classmethod
    def initialize(cls, config: ModelConfig, n_items: int) -> "ModelParams":
        """
        Uniform(-1/sqrt(D), 1/sqrt(D)) weights; orthonormal prototypes when K <= D

        Layer-norm gains start at 1 and every bias at 0.
        """
        if n_items < 1:
            raise ContractError("model needs at least one item")
        rng = np.random.Generator(np.random.Philox(config.init_seed))
        d, k = config.dim, config.n_interests
        scale = 1.0 / np.sqrt(d)

        def uniform(*shape):
            return rng.uniform(-scale, scale, size=shape)

        params = cls()
        params.register("item_embeddings", uniform(n_items, d))
        if k <= d:
            q, _ = np.linalg.qr(rng.standard_normal((d, k)))
            params.register("prototypes", q.T.copy())
        else:
            params.register("prototypes", uniform(k, d))
        params.register("position_embeddings", uniform(config.max_len, d))
        for b in range(config.n_blocks):
            params.register(f"block{b}.wq", uniform(d, d))
            params.register(f"block{b}.wk", uniform(d, d))
            params.register(f"block{b}.wv", uniform(d, d))
            params.register(f"block{b}.ln_gain", np.ones(d))
            params.register(f"block{b}.ln_bias", np.zeros(d))
            params.register(f"block{b}.ffn_w1", uniform(d, d))
            params.register(f"block{b}.ffn_b1", np.zeros(d))
            params.register(f"block{b}.ffn_w2", uniform(d, d))
            params.register(f"block{b}.ffn_b2", np.zeros(d))
        params.register("fusion_w", uniform(2 * d))
        params.register("fusion_b", np.zeros(1))
        params.validate_shapes(config, n_items)
        return params

    @property
    def n_items(self) -> int:
        return self.params["item_embeddings"].shape[0]

    def validate_shapes(self, config: ModelConfig, n_items: int):
        d = config.dim
        expected = {
            "item_embeddings": (n_items, d),
            "prototypes": (config.n_interests, d),
            "position_embeddings": (config.max_len, d),
            "fusion_w": (2 * d,),
            "fusion_b": (1,),
        }
        for b in range(config.n_blocks):
            for name in ("wq", "wk", "wv", "ffn_w1", "ffn_w2"):
                expected[f"block{b}.{name}"] = (d, d)
            for name in ("ln_gain", "ln_bias", "ffn_b1", "ffn_b2"):
                expected[f"block{b}.{name}"] = (d,)
        for name, shape in expected.items():
            if name not in self.params:
                raise ContractError(f"missing parameter '{name}'")
            if self.params[name].shape != shape:
                raise ContractError(f"parameter '{name}' has shape {self.params[name].shape}, expected {shape}")


# --------------------------------------------------------------------------
# Sub-interest assignment
# --------------------------------------------------------------------------

def assign_sub_interest(pos_emb: np.ndarray, recent_neg_emb: Optional[np.ndarray], prototypes: np.ndarray) -> int:
    """
    Prototype whose match-score gap between the positive and its recent
    negative is largest; plain best match when there is no negative.
    Ties go to the lowest index.
    """
    scores = prototypes @ pos_emb
    if recent_neg_emb is not None:
        scores = scores - prototypes @ recent_neg_emb
    return int(np.argmax(scores))


def recent_negative_position(positive_mask: np.ndarray, t: int, window: int) -> Optional[int]:
    """Nearest passive negative strictly before ``t`` and at most ``window`` positions away"""
    for j in range(t - 1, max(t - window, 0) - 1, -1):
        if not positive_mask[j]:
            return j
    return None


def pair_recent_negative(seq: UserSequence, t: int, window: int) -> Optional[int]:
    """Item index of the recent passive negative paired with the positive at ``t``"""
    mask = seq.positive_mask()
    if not mask[t]:
        raise ContractError(f"position {t} is not a positive event")
    j = recent_negative_position(mask, t, window)
    return None if j is None else seq.items[j]


def assign_positions(
    item_emb: np.ndarray,
    positive_mask: np.ndarray,
    prototypes: np.ndarray,
    window: int,
    pair_negatives: bool,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sub-interest of every encoder position

    Positives use the gap against their recent negative (when pairing is on),
    negatives and unpaired positives use the plain match score.

    Returns:
        (assignments, margins) where a margin is the gap between the best and
        the runner-up score (inf when K == 1)
    """
    match = item_emb @ prototypes.T
    scores = match.copy()
    if pair_negatives:
        for t in np.flatnonzero(positive_mask):
            j = recent_negative_position(positive_mask, t, window)
            if j is not None:
                scores[t] = match[t] - match[j]
    assignments = np.argmax(scores, axis=1)
    if scores.shape[1] > 1:
        top2 = np.sort(scores, axis=1)[:, -2:]
        margins = top2[:, 1] - top2[:, 0]
    else:
        margins = np.full(len(scores), np.inf)
    return assignments, margins


def active_interests(assignments: np.ndarray, positive_mask: np.ndarray, causal: bool = True) -> np.ndarray:
    """
    Sub-interest of the last positive visible to each query position

    Positions before the first positive fall back to their own assignment.
    """
    active = assignments.copy()
    if not causal:
        positives = np.flatnonzero(positive_mask)
        if len(positives):
            active[:] = assignments[positives[-1]]
        return active
    last = None
    for t in range(len(assignments)):
        if positive_mask[t]:
            last = assignments[t]
        if last is not None:
            active[t] = last
    return active


def beta_weights(assignments: np.ndarray, active: np.ndarray, beta1: float) -> np.ndarray:
    """beta[t, j] = beta1 if key j shares query t's active sub-interest else 1 - beta1"""
    same = assignments[None, :] == active[:, None]
    return np.where(same, beta1, 1.0 - beta1)


# --------------------------------------------------------------------------
# Encoder
# --------------------------------------------------------------------------

def _attention_forward(x, wq, wk, wv, beta, mask, n_heads):
    q, k, v = x @ wq, x @ wk, x @ wv
    dh = x.shape[1] // n_heads
    scale = 1.0 / np.sqrt(dh)
    out = np.empty_like(x)
    heads = []
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        alpha = softmax_rows(q[:, sl] @ k[:, sl].T * scale, mask)
        alpha_hat = beta * alpha
        out[:, sl] = alpha_hat @ v[:, sl]
        heads.append((alpha, alpha_hat))
    return out, (x, wq, wk, wv, q, k, v, beta, heads, scale)


def _attention_backward(dout, cache):
    x, wq, wk, wv, q, k, v, beta, heads, scale = cache
    dh = x.shape[1] // len(heads)
    dq, dk, dv = np.zeros_like(q), np.zeros_like(k), np.zeros_like(v)
    for h, (alpha, alpha_hat) in enumerate(heads):
        sl = slice(h * dh, (h + 1) * dh)
        dv[:, sl] = alpha_hat.T @ dout[:, sl]
        dalpha = (dout[:, sl] @ v[:, sl].T) * beta
        ds = softmax_rows_backward(dalpha, alpha) * scale
        dq[:, sl] = ds @ k[:, sl]
        dk[:, sl] = ds.T @ q[:, sl]
    dx = dq @ wq.T + dk @ wk.T + dv @ wv.T
    return dx, x.T @ dq, x.T @ dk, x.T @ dv


@dataclass
class BlockCache:
    attention: tuple
    layer_norm: tuple
    ffn_in: tuple
    ffn_act: np.ndarray
    ffn_out: tuple


@dataclass
class EncoderTrace:
    """Forward state of one encoded sequence, enough to run the backward pass"""

    items: np.ndarray
    positive_mask: np.ndarray
    assignments: np.ndarray
    active: np.ndarray
    margins: np.ndarray
    output: np.ndarray
    blocks: List[BlockCache] = field(default_factory=list)

    @property
    def assignment_margin(self) -> float:
        return float(np.min(self.margins)) if len(self.margins) else float("inf")

    @property
    def relu_margin(self) -> float:
        return float(min(np.min(np.abs(block.ffn_act)) for block in self.blocks))

    def attention_weights(self, block: int = 0, head: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        """(alpha, alpha_hat) of one head"""
        return self.blocks[block].attention[8][head]


def encode(
    items: np.ndarray,
    positive_mask: np.ndarray,
    assignments: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    active: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, List[BlockCache]]:
    """
    Run the beta-modulated self-attention encoder over one sequence

    Args:
        items: item indices of the encoder input (length T <= max_len)
        positive_mask: True where the event is positive feedback
        assignments: sub-interest of every position
        params: model parameters
        config: model configuration
        active: active sub-interest per query (computed when omitted)

    Returns:
        (outputs o_t of shape T x D, per-block caches)
    """
    t_len = len(items)
    if t_len == 0:
        raise ContractError("cannot encode an empty sequence")
    if t_len > config.max_len:
        raise ContractError(f"sequence length {t_len} exceeds max_len {config.max_len}")
    if len(assignments) != t_len:
        raise ContractError("assignments must cover every position")
    if active is None:
        active = active_interests(assignments, positive_mask, config.causal_active_interest)

    beta = beta_weights(assignments, active, config.beta1)
    mask = np.tril(np.ones((t_len, t_len), dtype=bool)) if config.causal_mask else None

    x = params["item_embeddings"][items] + params["position_embeddings"][:t_len]
    caches = []
    for b in range(config.n_blocks):
        p = lambda name: params[f"block{b}.{name}"]  # noqa: E731
        attended, att_cache = _attention_forward(x, p("wq"), p("wk"), p("wv"), beta, mask, config.n_heads)
        normed, ln_cache = layer_norm(attended + x, p("ln_gain"), p("ln_bias"), config.ln_eps)
        hidden, in_cache = linear(normed, p("ffn_w1"), p("ffn_b1"))
        activated, act_cache = relu(hidden)
        ffn, out_cache = linear(activated, p("ffn_w2"), p("ffn_b2"))
        x = ffn + normed
        caches.append(BlockCache(att_cache, ln_cache, in_cache, act_cache, out_cache))
    return ensure_finite(x, "encode"), caches


def encode_backward(dout: np.ndarray, trace: EncoderTrace, params: ModelParams, config: ModelConfig):
    """Accumulate gradients of the encoder given dL/do for every position"""
    dx = dout
    for b in reversed(range(config.n_blocks)):
        cache = trace.blocks[b]
        dnormed = dx.copy()
        dactivated, dw2, db2 = linear_backward(dx, cache.ffn_out)
        dhidden = relu_backward(dactivated, cache.ffn_act)
        dnormed_ffn, dw1, db1 = linear_backward(dhidden, cache.ffn_in)
        dnormed += dnormed_ffn
        dres, dgain, dbias = layer_norm_backward(dnormed, cache.layer_norm)
        dx_att, dwq, dwk, dwv = _attention_backward(dres, cache.attention)
        dx = dres + dx_att
        for name, grad in (
            ("wq", dwq), ("wk", dwk), ("wv", dwv),
            ("ln_gain", dgain), ("ln_bias", dbias),
            ("ffn_w1", dw1), ("ffn_b1", db1), ("ffn_w2", dw2), ("ffn_b2", db2),
        ):
            params.accumulate(f"block{b}.{name}", grad)

    t_len = len(trace.items)
    params.scatter_add("item_embeddings", trace.items, dx)
    dpos = np.zeros_like(params["position_embeddings"])
    dpos[:t_len] = dx
    params.accumulate("position_embeddings", dpos)


# --------------------------------------------------------------------------
# Projection and fusion
# --------------------------------------------------------------------------

def _project_rows(o: np.ndarray, prototypes: np.ndarray, scalar_gate: bool):
    if scalar_gate:
        gate = logistic(o @ prototypes.T)[:, :, None]
    else:
        gate = logistic(o[:, None, :] * prototypes[None, :, :])
    return o[:, None, :] * (1.0 + gate), gate


def _project_rows_backward(dsub, o, prototypes, gate, scalar_gate):
    slope = gate * (1.0 - gate)
    if scalar_gate:
        u = np.einsum("nkd,nd->nk", dsub, o)[:, :, None] * slope
        do = (dsub * (1.0 + gate)).sum(axis=1) + (u * prototypes[None, :, :]).sum(axis=1)
        dz = (u * o[:, None, :]).sum(axis=0)
    else:
        common = dsub * o[:, None, :] * slope
        do = (dsub * (1.0 + gate)).sum(axis=1) + (common * prototypes[None, :, :]).sum(axis=1)
        dz = (common * o[:, None, :]).sum(axis=0)
    return do, dz


def project_sub_interests(o: np.ndarray, prototypes: np.ndarray, scalar_gate: bool = False) -> np.ndarray:
    """
    K user-specific sub-interest vectors o + sigma(o * z_k) * o

    Every coordinate keeps the sign of o and lies between 1x and 2x its magnitude.
    """
    sub, _ = _project_rows(np.asarray(o, dtype=np.float64)[None, :], prototypes, scalar_gate)
    return sub[0]


def _fuse_rows(sub, target, fusion_w, fusion_b, ablate, active):
    n, k, d = sub.shape
    match = np.einsum("nkd,nd->nk", sub, target)
    if ablate:
        gamma = np.zeros((n, k))
        gamma[np.arange(n), active] = 1.0
        return match[np.arange(n), active], (sub, target, match, gamma, None)
    logits = (target @ fusion_w[:d])[:, None] + sub @ fusion_w[d:] + fusion_b[0]
    weight = logistic(logits)
    gamma = weight / weight.sum(axis=1, keepdims=True)
    return (gamma * match).sum(axis=1), (sub, target, match, gamma, weight)


def _fuse_rows_backward(dscore, cache, fusion_w):
    sub, target, match, gamma, weight = cache
    d = target.shape[1]
    dmatch = gamma * dscore[:, None]
    dsub = dmatch[:, :, None] * target[:, None, :]
    dtarget = np.einsum("nk,nkd->nd", dmatch, sub)
    dw = np.zeros_like(fusion_w)
    db = np.zeros(1)
    if weight is not None:
        dgamma = match * dscore[:, None]
        dweight = (dgamma - (gamma * dgamma).sum(axis=1, keepdims=True)) / weight.sum(axis=1, keepdims=True)
        dlogit = dweight * weight * (1.0 - weight)
        dw[:d] = dlogit.sum(axis=1) @ target
        dw[d:] = np.einsum("nk,nkd->d", dlogit, sub)
        db[0] = dlogit.sum()
        dtarget += dlogit.sum(axis=1)[:, None] * fusion_w[:d]
        dsub += dlogit[:, :, None] * fusion_w[d:][None, None, :]
    return dsub, dtarget, dw, db


def fusion_weights(sub_vectors: np.ndarray, target_emb: np.ndarray, fusion_w: np.ndarray, fusion_b: np.ndarray) -> np.ndarray:
    """Normalized importance gamma_k of every sub-interest for one target"""
    _, cache = _fuse_rows(sub_vectors[None], target_emb[None], fusion_w, np.atleast_1d(fusion_b), False, None)
    return cache[3][0]


def fuse_score(
    sub_vectors: np.ndarray,
    target_emb: np.ndarray,
    fusion_w: np.ndarray,
    fusion_b,
    ablate_adaptive_fusion: bool = False,
    active_k: Optional[int] = None,
) -> float:
    """
    Score sum_k gamma_k <o~_k, e_i>

    With adaptive fusion ablated gamma is one-hot on ``active_k``.
    """
    if ablate_adaptive_fusion and active_k is None:
        raise ContractError("ablated fusion needs the active sub-interest")
    active = None if active_k is None else np.array([active_k])
    score, _ = _fuse_rows(
        sub_vectors[None],
        target_emb[None],
        fusion_w,
        np.atleast_1d(np.asarray(fusion_b, dtype=np.float64)),
        ablate_adaptive_fusion,
        active,
    )
    return float(score[0])


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------

@dataclass
class ScoreCache:
    query_rows: np.ndarray
    items: np.ndarray
    gate: Optional[np.ndarray] = None
    fuse: Optional[tuple] = None


class SineModel:
    """Forward/backward over ModelParams for one ModelConfig"""

    def __init__(self, config: ModelConfig, params: ModelParams):
        params.validate_shapes(config, params.n_items)
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig, n_items: int) -> "SineModel":
        return cls(config, ModelParams.initialize(config, n_items))

    @property
    def n_items(self) -> int:
        return self.params.n_items

    def encoder_view(self, items: np.ndarray, positive_mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Positives only when negative feedback is ablated, otherwise unchanged"""
        items = np.asarray(items, dtype=np.int64)
        positive_mask = np.asarray(positive_mask, dtype=bool)
        if self.config.uses_negatives:
            return items, positive_mask
        return items[positive_mask], positive_mask[positive_mask]

    def trace(self, items: np.ndarray, positive_mask: np.ndarray) -> EncoderTrace:
        """Assign sub-interests and encode an encoder-view sequence"""
        cfg = self.config
        self._check_items(items)
        assignments, margins = assign_positions(
            self.params["item_embeddings"][items],
            positive_mask,
            self.params["prototypes"],
            cfg.recent_neg_window,
            cfg.uses_negatives,
        )
        active = active_interests(assignments, positive_mask, cfg.causal_active_interest)
        output, blocks = encode(items, positive_mask, assignments, self.params, cfg, active)
        return EncoderTrace(items, positive_mask, assignments, active, margins, output, blocks)

    def trace_backward(self, trace: EncoderTrace, dout: np.ndarray):
        encode_backward(dout, trace, self.params, self.config)

    def score_rows(self, query_rows: np.ndarray, items: np.ndarray, active: np.ndarray) -> Tuple[np.ndarray, ScoreCache]:
        """
        Score item ``items[n]`` against encoder output ``query_rows[n]``

        Args:
            query_rows: n x D encoder outputs
            items: n item indices
            active: n active sub-interests (used when fusion is ablated)
        """
        cfg = self.config
        target = self.params["item_embeddings"][items]
        if cfg.architecture == "sasrec":
            return np.einsum("nd,nd->n", query_rows, target), ScoreCache(query_rows, items)
        sub, gate = _project_rows(query_rows, self.params["prototypes"], cfg.scalar_gate)
        scores, fuse = _fuse_rows(
            sub, target, self.params["fusion_w"], self.params["fusion_b"], cfg.ablate_adaptive_fusion, active
        )
        return ensure_finite(scores, "score"), ScoreCache(query_rows, items, gate, fuse)

    def score_rows_backward(self, dscores: np.ndarray, cache: ScoreCache) -> np.ndarray:
        """Accumulate item/prototype/fusion gradients and return dL/d query_rows"""
        cfg = self.config
        if cfg.architecture == "sasrec":
            target = self.params["item_embeddings"][cache.items]
            self.params.scatter_add("item_embeddings", cache.items, dscores[:, None] * cache.query_rows)
            return dscores[:, None] * target
        dsub, dtarget, dw, db = _fuse_rows_backward(dscores, cache.fuse, self.params["fusion_w"])
        self.params.scatter_add("item_embeddings", cache.items, dtarget)
        self.params.accumulate("fusion_w", dw)
        self.params.accumulate("fusion_b", db)
        dquery, dz = _project_rows_backward(dsub, cache.query_rows, self.params["prototypes"], cache.gate, cfg.scalar_gate)
        self.params.accumulate("prototypes", dz)
        return dquery

    def score_next(self, items: np.ndarray, positive_mask: np.ndarray, candidates: np.ndarray) -> np.ndarray:
        """
        Score candidate items as the next interaction after a prefix

        Args:
            items: prefix item indices, oldest first (negatives included)
            positive_mask: feedback of every prefix event
            candidates: candidate item indices

        Returns:
            one score per candidate, in candidate order
        """
        view_items, view_mask = self.encoder_view(items, positive_mask)
        if len(view_items) == 0:
            raise ContractError("prefix has nothing to encode")
        candidates = np.asarray(candidates, dtype=np.int64)
        self._check_items(candidates)
        trace = self.trace(view_items, view_mask)
        n = len(candidates)
        query = np.repeat(trace.output[-1:], n, axis=0)
        active = np.full(n, trace.active[-1])
        scores, _ = self.score_rows(query, candidates, active)
        return scores

    def _check_items(self, items: np.ndarray):
        items = np.asarray(items)
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            bad = items[(items < 0) | (items >= self.n_items)][0]
            raise VocabularyError(int(bad))


def score_next(
    items: np.ndarray,
    positive_mask: np.ndarray,
    candidates: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
) -> np.ndarray:
    return SineModel(config, params).score_next(items, positive_mask, candidates)


def sasrec_score(
    items: np.ndarray,
    positive_mask: np.ndarray,
    candidates: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
) -> np.ndarray:
    """
    Plain SASRec scoring <o_t, e_i> with the encoder of ``config``

    Negatives are left out of the input and every position shares one
    sub-interest, so attention is scaled uniformly.
    """
    items = np.asarray(items, dtype=np.int64)
    positive_mask = np.asarray(positive_mask, dtype=bool)
    items = items[positive_mask]
    if len(items) == 0:
        raise ContractError("prefix has no positive event")
    candidates = np.asarray(candidates, dtype=np.int64)
    mask = np.ones(len(items), dtype=bool)
    zeros = np.zeros(len(items), dtype=np.int64)
    output, _ = encode(items, mask, zeros, params, config, zeros)
    return params["item_embeddings"][candidates] @ output[-1]


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(path: Union[str, Path], params: ModelParams, config: ModelConfig) -> Path:
    """Write a versioned .npz checkpoint holding the config and every tensor"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format": "sine-checkpoint", "version": CHECKPOINT_VERSION, "config": config.model_dump()}
    with open(path, "wb") as f:
        np.savez(f, __header__=np.array(json.dumps(header, sort_keys=True)), **params.params)
    logger.info("checkpoint saved", path=str(path), tensors=len(params.params))
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[ModelConfig, ModelParams]:
    path = Path(path)
    with np.load(path, allow_pickle=False) as archive:
        if "__header__" not in archive.files:
            raise SchemaError(f"{path}: not a checkpoint")
        header = json.loads(str(archive["__header__"]))
        if header.get("format") != "sine-checkpoint" or header.get("version") != CHECKPOINT_VERSION:
            raise SchemaError(f"{path}: unsupported checkpoint {header.get('format')} v{header.get('version')}")
        config = ModelConfig.model_validate(header["config"])
        params = ModelParams({name: archive[name] for name in archive.files if name != "__header__"})
    params.validate_shapes(config, params.n_items)
    return config, params
