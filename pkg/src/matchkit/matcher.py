"""Attention matcher with matchability-based partial assignment.

Tokens are projected descriptors. Each layer runs self-attention (rotary
position encoding, weights shared by both images) followed by bidirectional
cross-attention, each with a residual feed-forward update. The assignment is
``p = softmax_row(s) * softmax_col(s) * sigma_a * sigma_b``. Training runs in
float64 through the in-repo autograd.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .describe import PatchEmbedConfig, descriptor_input, init_patch_embed, patch_embed_forward
from .errors import DimensionMismatch, EmptySupervision, NonFiniteLoss, UnknownSource, ValidationError
from .features import FeatureSet, MatchSet
from .gtlabel import GTLabels

log = logging.getLogger(__name__)

LOG_EPS = math.log(1e-12)


@dataclass(frozen=True)
class SourceSpec:
    """A registered descriptor source: input width and encoding."""

    dim: int
    kind: str = "real"  # real | binary | patch

    def __post_init__(self):
        if self.kind not in ("real", "binary", "patch"):
            raise ValidationError(f"unknown source kind {self.kind!r}")
        if self.dim < 1:
            raise ValidationError("source dim must be >= 1")


@dataclass
class MatcherParams:
    d: int
    num_layers: int
    num_heads: int
    sources: dict[str, SourceSpec]
    blocks: dict[str, np.ndarray]
    rope_scale: float = 32.0
    seed: int = 0
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.d % (2 * self.num_heads) or (self.d // self.num_heads) % 4:
            raise ValidationError("d must split into heads whose width is divisible by 4")
        for k, v in self.blocks.items():
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"parameter block {k} is not finite")

    @property
    def head_dim(self) -> int:
        return self.d // self.num_heads

    def copy(self) -> "MatcherParams":
        return replace(self, blocks={k: v.copy() for k, v in self.blocks.items()},
                       sources=dict(self.sources), history=list(self.history))

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.blocks.values()))


@dataclass
class AssignmentResult:
    p: np.ndarray
    sigma_a: np.ndarray
    sigma_b: np.ndarray
    scores: np.ndarray
    log_p: np.ndarray | None = field(default=None, repr=False)


@dataclass
class TrainingPair:
    feat_a: FeatureSet
    feat_b: FeatureSet
    labels: GTLabels
    pair_id: str = ""


# -- initialisation -------------------------------------------------------------------
def _glorot(rng, fan_in, fan_out):
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))


def init_matcher(sources: Mapping[str, SourceSpec | int], d: int = 64, num_layers: int = 4,
                 num_heads: int = 4, rope_scale: float = 32.0, seed: int = 0,
                 patch_cfg: PatchEmbedConfig | None = None) -> MatcherParams:
    """Random parameters for every block, drawn in a fixed name order."""
    specs = {k: v if isinstance(v, SourceSpec) else SourceSpec(int(v)) for k, v in sources.items()}
    if not specs:
        raise ValidationError("at least one descriptor source is required")
    rng = np.random.default_rng(seed)
    b: dict[str, np.ndarray] = {}
    for name in sorted(specs):
        spec = specs[name]
        din = spec.dim
        if spec.kind == "patch":
            pc = patch_cfg or PatchEmbedConfig(patch_size=int(round(np.sqrt(spec.dim))), seed=seed)
            if pc.patch_size ** 2 != spec.dim:
                raise DimensionMismatch("patch source dim must equal patch_size**2")
            b.update(init_patch_embed(pc))
            din = pc.out_dim
        b[f"proj.{name}.w"] = _glorot(rng, din, d)
        b[f"proj.{name}.b"] = np.zeros(d)
    for layer in range(num_layers):
        for kind, mats in (("self", ("q", "k", "v", "o")), ("cross", ("qk", "v", "o"))):
            pre = f"l{layer}.{kind}"
            for m in mats:
                b[f"{pre}.w{m}"] = _glorot(rng, d, d)
                b[f"{pre}.b{m}"] = np.zeros(d)
            b[f"{pre}.ff.w1"] = _glorot(rng, 2 * d, 2 * d)
            b[f"{pre}.ff.b1"] = np.zeros(2 * d)
            b[f"{pre}.ff.g"] = np.ones(2 * d)
            b[f"{pre}.ff.beta"] = np.zeros(2 * d)
            b[f"{pre}.ff.w2"] = _glorot(rng, 2 * d, d)
            b[f"{pre}.ff.b2"] = np.zeros(d)
    b["final.w"] = _glorot(rng, d, d)
    b["final.b"] = np.zeros(d)
    b["match.w"] = _glorot(rng, d, 1)
    b["match.b"] = np.zeros(1)
    return MatcherParams(d, num_layers, num_heads, specs, b, float(rope_scale), seed)


# -- building blocks -------------------------------------------------------------------
def normalized_positions(xy: np.ndarray, image_size) -> np.ndarray:
    """Map pixel coordinates to [-1, 1]^2 using the image width and height."""
    w, h = image_size
    return 2.0 * np.asarray(xy, dtype=np.float64) / np.array([w, h], dtype=np.float64) - 1.0


def rotary_frequencies(head_dim: int, scale: float = 1.0) -> np.ndarray:
    """``scale * 10^(-4k/(head_dim/4))``: log-spaced from ``scale`` downwards."""
    if head_dim % 4:
        raise ValidationError("rotary head dim must be divisible by 4")
    nf = head_dim // 4
    return scale * 10000.0 ** (-np.arange(nf) / nf)


def _rotary_tables(pos: np.ndarray, head_dim: int, scale: float):
    freqs = rotary_frequencies(head_dim, scale)
    ang = np.concatenate([pos[:, :1] * freqs, pos[:, 1:2] * freqs], axis=1)  # (M, dh/2)
    ang = np.repeat(ang, 2, axis=1)
    return np.cos(ang), np.sin(ang)


def _rotate_half_matrix(head_dim: int) -> np.ndarray:
    j = np.zeros((head_dim, head_dim))
    for k in range(0, head_dim, 2):
        j[k + 1, k] = -1.0
        j[k, k + 1] = 1.0
    return j


def rotary_encode(v, pos, scale: float = 1.0):
    """Rotate consecutive coordinate pairs of ``v`` by angles ``freq * pos``.

    The first half of the last axis encodes x, the second half y. Accepts a
    numpy array or a Tensor of shape (..., M, dh) with ``pos`` of shape (M, 2).
    """
    pos = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    dh = v.shape[-1]
    cos, sin = _rotary_tables(pos, dh, scale)
    jm = _rotate_half_matrix(dh)
    if isinstance(v, ag.Tensor):
        return ag.add(ag.mul(v, cos), ag.mul(ag.matmul(v, jm), sin))
    v = np.asarray(v, dtype=np.float64)
    return v * cos + (v @ jm) * sin


def _split_heads(x, h):
    m, d = x.shape
    return ag.transpose(ag.reshape(x, (m, h, d // h)), (1, 0, 2))


def _merge_heads(x):
    h, m, dh = x.shape
    return ag.reshape(ag.transpose(x, (1, 0, 2)), (m, h * dh))


def _ffn(x, msg, P, pre):
    y = ag.linear(ag.concat([x, msg], axis=-1), P[f"{pre}.ff.w1"], P[f"{pre}.ff.b1"])
    y = ag.gelu(ag.layer_norm(y, P[f"{pre}.ff.g"], P[f"{pre}.ff.beta"]))
    return ag.add(x, ag.linear(y, P[f"{pre}.ff.w2"], P[f"{pre}.ff.b2"]))


def _self_block(x, rot, P, pre, h):
    dh = x.shape[1] // h
    q = _split_heads(ag.linear(x, P[f"{pre}.wq"], P[f"{pre}.bq"]), h)
    k = _split_heads(ag.linear(x, P[f"{pre}.wk"], P[f"{pre}.bk"]), h)
    v = _split_heads(ag.linear(x, P[f"{pre}.wv"], P[f"{pre}.bv"]), h)
    cos, sin, jm = rot
    q = ag.add(ag.mul(q, cos), ag.mul(ag.matmul(q, jm), sin))
    k = ag.add(ag.mul(k, cos), ag.mul(ag.matmul(k, jm), sin))
    att = ag.softmax(ag.matmul(q, ag.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dh)), axis=-1)
    msg = ag.linear(_merge_heads(ag.matmul(att, v)), P[f"{pre}.wo"], P[f"{pre}.bo"])
    return _ffn(x, msg, P, pre)


def _cross_block(xa, xb, P, pre, h):
    dh = xa.shape[1] // h
    qa = _split_heads(ag.linear(xa, P[f"{pre}.wqk"], P[f"{pre}.bqk"]), h)
    qb = _split_heads(ag.linear(xb, P[f"{pre}.wqk"], P[f"{pre}.bqk"]), h)
    va = _split_heads(ag.linear(xa, P[f"{pre}.wv"], P[f"{pre}.bv"]), h)
    vb = _split_heads(ag.linear(xb, P[f"{pre}.wv"], P[f"{pre}.bv"]), h)
    sim = ag.matmul(qa, ag.transpose(qb, (0, 2, 1))) * (1.0 / np.sqrt(dh))
    msg_a = ag.matmul(ag.softmax(sim, axis=-1), vb)
    msg_b = ag.matmul(ag.transpose(ag.softmax(sim, axis=-2), (0, 2, 1)), va)
    msg_a = ag.linear(_merge_heads(msg_a), P[f"{pre}.wo"], P[f"{pre}.bo"])
    msg_b = ag.linear(_merge_heads(msg_b), P[f"{pre}.wo"], P[f"{pre}.bo"])
    return _ffn(xa, msg_a, P, pre), _ffn(xb, msg_b, P, pre)


def _embed(feat: FeatureSet, params: MatcherParams, P) -> ag.Tensor:
    spec = params.sources.get(feat.source_id)
    if spec is None:
        raise UnknownSource(f"no projection registered for descriptor source {feat.source_id!r}")
    if spec.kind == "patch":
        x = feat.patches if feat.patches is not None else feat.descriptors
        x = np.asarray(x, dtype=np.float64).reshape(len(feat), -1)
        if x.shape[1] != spec.dim:
            raise DimensionMismatch(f"patch width {x.shape[1]} != registered {spec.dim}")
        x = patch_embed_forward(x, P)
    else:
        x = descriptor_input(feat.descriptors, spec.kind == "binary").reshape(len(feat), -1)
        if x.shape[1] != spec.dim:
            raise DimensionMismatch(f"descriptor dim {x.shape[1]} != registered {spec.dim}")
        x = ag.Tensor(x)
    y = ag.linear(x, P[f"proj.{feat.source_id}.w"], P[f"proj.{feat.source_id}.b"])
    return ag.l2_normalize(y, axis=-1)


def embed_tokens(feat: FeatureSet, params: MatcherParams) -> np.ndarray:
    """(M, d) tokens: projected, L2-normalised descriptors."""
    with ag.no_grad():
        return _embed(feat, params, _const(params)).data


def _const(params: MatcherParams) -> dict[str, ag.Tensor]:
    return {k: ag.Tensor(v) for k, v in params.blocks.items()}


def _forward_graph(feat_a: FeatureSet, feat_b: FeatureSet, params: MatcherParams, P):
    """Returns (log_p, scores, za, zb) as tensors."""
    if len(feat_a) < 1 or len(feat_b) < 1:
        raise ValidationError("forward needs at least one keypoint per image")
    h = params.num_heads
    xa, xb = _embed(feat_a, params, P), _embed(feat_b, params, P)
    jm = _rotate_half_matrix(params.head_dim)
    rot_a = (*_rotary_tables(normalized_positions(feat_a.keypoints.xy, feat_a.image_size),
                             params.head_dim, params.rope_scale), jm)
    rot_b = (*_rotary_tables(normalized_positions(feat_b.keypoints.xy, feat_b.image_size),
                             params.head_dim, params.rope_scale), jm)
    for layer in range(params.num_layers):
        pre = f"l{layer}.self"
        xa, xb = _self_block(xa, rot_a, P, pre, h), _self_block(xb, rot_b, P, pre, h)
        xa, xb = _cross_block(xa, xb, P, f"l{layer}.cross", h)
    fa = ag.linear(xa, P["final.w"], P["final.b"])
    fb = ag.linear(xb, P["final.w"], P["final.b"])
    s = ag.matmul(fa, ag.transpose(fb)) * (1.0 / np.sqrt(params.d))
    za = ag.reshape(ag.linear(xa, P["match.w"], P["match.b"]), (len(feat_a),))
    zb = ag.reshape(ag.linear(xb, P["match.w"], P["match.b"]), (len(feat_b),))
    logp = ag.add(ag.add(ag.log_softmax(s, axis=1), ag.log_softmax(s, axis=0)),
                  ag.add(ag.reshape(ag.log_sigmoid(za), (len(feat_a), 1)),
                         ag.reshape(ag.log_sigmoid(zb), (1, len(feat_b)))))
    return logp, s, za, zb


def forward(feat_a: FeatureSet, feat_b: FeatureSet, params: MatcherParams) -> AssignmentResult:
    with ag.no_grad():
        logp, s, za, zb = _forward_graph(feat_a, feat_b, params, _const(params))
    sig = lambda z: 0.5 * (1.0 + np.tanh(0.5 * z))  # noqa: E731
    return AssignmentResult(np.exp(logp.data), sig(za.data), sig(zb.data), s.data, logp.data)


def assignment_from_scores(scores, za, zb) -> AssignmentResult:
    """The assignment rule on its own, for given similarity scores and matchability logits."""
    s = np.asarray(scores, dtype=np.float64)
    ta, tb = ag.Tensor(np.asarray(za, dtype=np.float64)), ag.Tensor(np.asarray(zb, dtype=np.float64))
    logp = (ag.log_softmax(s, 1).data + ag.log_softmax(s, 0).data
            + ag.log_sigmoid(ta).data[:, None] + ag.log_sigmoid(tb).data[None, :])
    return AssignmentResult(np.exp(logp), ag.sigmoid(ta).data, ag.sigmoid(tb).data, s, logp)


def extract_matches(res: AssignmentResult, tau: float = 0.1) -> MatchSet:
    """Mutual row/column argmax entries of ``p`` whose value exceeds ``tau``."""
    if not 0 < tau < 1:
        raise ValidationError("tau must lie in (0, 1)")
    p = np.asarray(res.p if isinstance(res, AssignmentResult) else res)
    if p.size == 0:
        return MatchSet.empty()
    row = p.argmax(1)
    col = p.argmax(0)
    i = np.arange(p.shape[0])
    keep = (col[row] == i) & (p[i, row] > tau)
    i = i[keep]
    j = row[keep]
    return MatchSet(np.stack([i, j], 1), p[i, j])


# -- loss ------------------------------------------------------------------------------
def _loss_graph(logp, za, zb, labels: GTLabels):
    m = labels.matches
    na = np.asarray(labels.negatives_a, dtype=np.int64)
    nb = np.asarray(labels.negatives_b, dtype=np.int64)
    if len(m) == 0 and len(na) == 0 and len(nb) == 0:
        raise EmptySupervision("pair has neither matches nor negatives")
    terms = []
    if len(m):
        lp = ag.clamp_min(ag.getitem(logp, (m[:, 0], m[:, 1])), LOG_EPS)
        terms.append(ag.neg(ag.tsum(lp)) * (1.0 / len(m)))
    for z, neg in ((za, na), (zb, nb)):
        if len(neg):
            # log(1 - sigma(z)) = log_sigmoid(-z)
            l1 = ag.clamp_min(ag.log_sigmoid(ag.neg(ag.getitem(z, neg))), LOG_EPS)
            terms.append(ag.neg(ag.tsum(l1)) * (0.5 / len(neg)))
    out = terms[0]
    for t in terms[1:]:
        out = ag.add(out, t)
    return out


def loss(res: AssignmentResult, labels: GTLabels) -> float:
    """Negative log-likelihood of the GT matches plus matchability terms on negatives."""
    logp = res.log_p if res.log_p is not None else np.log(np.maximum(res.p, 1e-300))
    with np.errstate(divide="ignore"):
        za = np.log(res.sigma_a) - np.log1p(-res.sigma_a)
        zb = np.log(res.sigma_b) - np.log1p(-res.sigma_b)
    with ag.no_grad():
        return float(_loss_graph(ag.Tensor(logp), ag.Tensor(za), ag.Tensor(zb), labels).data)


def pair_loss(params: MatcherParams, pair: TrainingPair) -> float:
    with ag.no_grad():
        logp, _, za, zb = _forward_graph(pair.feat_a, pair.feat_b, params, _const(params))
        return float(_loss_graph(logp, za, zb, pair.labels).data)


def loss_and_grad(params: MatcherParams, pair: TrainingPair, trainable=None):
    names = [k for k in params.blocks if trainable is None or trainable(k)]
    P = _const(params)
    for k in names:
        P[k] = ag.parameter(params.blocks[k])
    logp, _, za, zb = _forward_graph(pair.feat_a, pair.feat_b, params, P)
    L = _loss_graph(logp, za, zb, pair.labels)
    L.backward()
    grads = {k: (P[k].grad if P[k].grad is not None else np.zeros_like(params.blocks[k])) for k in names}
    return float(L.data), grads


# -- evaluation metrics ----------------------------------------------------------------
@dataclass
class MatchScore:
    tp: int
    num_pred: int
    num_gt: int

    @property
    def precision(self) -> float:
        return self.tp / self.num_pred if self.num_pred else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.num_gt if self.num_gt else 0.0

    @property
    def f1(self) -> float:
        return 2 * self.tp / (self.num_pred + self.num_gt) if (self.num_pred + self.num_gt) else 0.0

    def __add__(self, other: "MatchScore") -> "MatchScore":
        return MatchScore(self.tp + other.tp, self.num_pred + other.num_pred, self.num_gt + other.num_gt)


def score_matches(pred: MatchSet, labels: GTLabels) -> MatchScore:
    """Every prediction counts; only exact GT pairs are true positives."""
    gt = {(int(i), int(j)) for i, j in labels.matches}
    tp = sum((int(i), int(j)) in gt for i, j in pred.pairs)
    return MatchScore(tp, len(pred), len(gt))


def evaluate(params: MatcherParams, pairs: Sequence[TrainingPair], tau: float = 0.1) -> dict:
    total = MatchScore(0, 0, 0)
    losses = []
    for pr in pairs:
        res = forward(pr.feat_a, pr.feat_b, params)
        total = total + score_matches(extract_matches(res, tau), pr.labels)
        try:
            losses.append(loss(res, pr.labels))
        except EmptySupervision:
            pass
    return {"loss": float(np.mean(losses)) if losses else float("nan"), "precision": total.precision,
            "recall": total.recall, "f1": total.f1, "tp": total.tp, "num_pred": total.num_pred,
            "num_gt": total.num_gt}


# -- optimisation ----------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr_initial: float = 5e-5
    lr_final: float = 5e-6
    decay_epochs: int = 10
    batch_size: int = 4
    confidence: float = 0.1
    grad_clip: float = 1.0
    val_fraction: float = 0.1
    frozen_prefixes: tuple[str, ...] = ()
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.lr_initial <= 0 or self.lr_final <= 0:
            raise ValidationError("learning rates must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValidationError("val_fraction must lie in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        """Geometric interpolation from lr_initial to lr_final over decay_epochs."""
        if self.decay_epochs <= 0:
            return self.lr_final
        f = min(epoch, self.decay_epochs) / self.decay_epochs
        return float(self.lr_initial * (self.lr_final / self.lr_initial) ** f)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def split_heldout(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train, val) index split."""
    k = int(round(n * fraction))
    if n > 1:
        k = min(max(k, 1 if fraction > 0 else 0), n - 1)
    else:
        k = 0
    perm = np.random.default_rng([seed, 2]).permutation(n)
    return np.sort(perm[k:]), np.sort(perm[:k])


def _optimize(params: MatcherParams, cfg: TrainConfig, n: int, get_pair: Callable[[int], TrainingPair],
              val: Sequence[TrainingPair], on_epoch=None, on_batch=None) -> MatcherParams:
    params = params.copy()
    trainable = lambda k: not any(k.startswith(p) for p in cfg.frozen_prefixes)  # noqa: E731
    names = [k for k in params.blocks if trainable(k)]
    opt = Adam({k: params.blocks[k] for k in names})
    order_rng = np.random.default_rng([cfg.seed, 0])
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        perm = order_rng.permutation(n)
        ep_losses = []
        for start in range(0, n, cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            if on_batch is not None:
                on_batch()
            acc = {k: np.zeros_like(params.blocks[k]) for k in names}
            used = 0
            for idx in batch:
                pair = get_pair(int(idx))
                try:
                    val_, grads = loss_and_grad(params, pair, trainable)
                except EmptySupervision:
                    continue
                if not np.isfinite(val_) or any(not np.all(np.isfinite(g)) for g in grads.values()):
                    raise NonFiniteLoss(f"non-finite loss/gradient at epoch {epoch} step {step} "
                                        f"pair {pair.pair_id!r} (loss={val_})")
                for k in names:
                    acc[k] += grads[k]
                ep_losses.append(val_)
                used += 1
            if not used:
                continue
            for k in names:
                acc[k] /= used
            gnorm = float(np.sqrt(sum(float((g * g).sum()) for g in acc.values())))
            if cfg.grad_clip > 0 and gnorm > cfg.grad_clip:
                for k in names:
                    acc[k] *= cfg.grad_clip / gnorm
            opt.step(params.blocks, acc, lr)
            step += 1
        rec = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(ep_losses)) if ep_losses else float("nan")}
        if val and ((epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            ev = evaluate(params, val, cfg.confidence)
            rec.update({"val_loss": ev["loss"], "precision": ev["precision"], "recall": ev["recall"],
                        "f1": ev["f1"]})
        params.history.append(rec)
        log.info("epoch %d %s", epoch, " ".join(f"{k}={v:.4g}" for k, v in rec.items() if k != "epoch"))
        if on_epoch is not None:
            on_epoch(rec)
    return params


def train(corpus: Sequence[TrainingPair], cfg: TrainConfig, params: MatcherParams,
          val: Sequence[TrainingPair] | None = None, on_epoch=None) -> MatcherParams:
    """Adam on the assignment NLL; deterministic for a fixed ``cfg.seed``.

    Without an explicit ``val`` set, ``cfg.val_fraction`` of the corpus is held
    out for per-epoch loss/precision/recall.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValidationError("empty training corpus")
    if val is None:
        tr, va = split_heldout(len(corpus), cfg.val_fraction, cfg.seed)
        val = [corpus[i] for i in va]
        corpus = [corpus[i] for i in tr]
    return _optimize(params, cfg, len(corpus), lambda i: corpus[i], val, on_epoch)


def finetune_multi_detector(params: MatcherParams, detectors: Sequence, build_pair: Callable[[int, object], TrainingPair],
                            num_pairs: int, cfg: TrainConfig, val: Sequence[TrainingPair] = (),
                            on_epoch=None) -> MatcherParams:
    """Train with keypoints from one detector, drawn uniformly per optimizer step.

    Every pair of a batch uses the step's detector. ``build_pair(i, detector)``
    produces the labelled pair ``i`` with keypoints from ``detector``;
    descriptors always come from the one fixed source the caller samples
    from. Pairs are cached per (i, detector). Detector draws use their own RNG
    stream, so a single-detector set reproduces :func:`train` on the same
    pairs exactly.
    """
    if len(detectors) < 1:
        raise ValidationError("need at least one detector")
    if num_pairs < 1:
        raise ValidationError("empty training corpus")
    det_rng = np.random.default_rng([cfg.seed, 1])
    cache: dict = {}
    current = [0]

    def draw():
        if len(detectors) > 1:
            current[0] = int(det_rng.integers(len(detectors)))

    def get(i):
        key = (i, current[0])
        if key not in cache:
            cache[key] = build_pair(i, detectors[current[0]])
        return cache[key]

    return _optimize(params, cfg, num_pairs, get, list(val), on_epoch, on_batch=draw)


# -- gradient verification -------------------------------------------------------------
def gradient_check(params: MatcherParams, pair: TrainingPair, labels: GTLabels | None = None, seed: int = 0,
                   h: float = 1e-4, coords_per_block: int = 3, details: dict | None = None) -> float:
    """Max relative error between autograd and central differences.

    For every parameter block: one random unit direction plus the coordinate
    with the largest gradient and ``coords_per_block - 1`` random coordinates.
    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``. Probes whose ±h
    evaluations flip any ReLU mask are retried with h/4 (twice), then skipped
    and counted in ``details['skipped']``.
    """
    if labels is not None:
        pair = TrainingPair(pair.feat_a, pair.feat_b, labels, pair.pair_id)
    base = params.copy()
    _, grads = loss_and_grad(base, pair)
    rng = np.random.default_rng(seed)

    def f(blocks):
        p = replace(base, blocks=blocks)
        with ag.record_relu_masks() as masks:
            v = pair_loss(p, pair)
        return v, masks

    def same(m1, m2):
        return len(m1) == len(m2) and all(np.array_equal(a, b) for a, b in zip(m1, m2))

    worst = 0.0
    per_block = {}
    skipped = 0
    for name in sorted(base.blocks):
        g = grads[name]
        theta = base.blocks[name]
        probes = []
        u = rng.normal(size=theta.shape)
        probes.append(u / np.linalg.norm(u))
        flat = [int(np.argmax(np.abs(g)))] + list(rng.integers(theta.size, size=max(coords_per_block - 1, 0)))
        for c in flat:
            e = np.zeros(theta.size)
            e[c] = 1.0
            probes.append(e.reshape(theta.shape))
        block_err = 0.0
        for dirn in probes:
            analytic = float((g * dirn).sum())
            step = h
            numeric = None
            for _ in range(3):
                blocks_p = dict(base.blocks)
                blocks_m = dict(base.blocks)
                blocks_p[name] = theta + step * dirn
                blocks_m[name] = theta - step * dirn
                fp, mp = f(blocks_p)
                fm, mm = f(blocks_m)
                if same(mp, mm):
                    numeric = (fp - fm) / (2 * step)
                    break
                step /= 4
            if numeric is None:
                skipped += 1
                continue
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            block_err = max(block_err, err)
        per_block[name] = block_err
        worst = max(worst, block_err)
    if details is not None:
        details["per_block"] = per_block
        details["skipped"] = skipped
    return worst
