"""Loss builders for the five training methods.

All builders take an explicit tape plus plain input arrays and return scalar
tensors, so a step's objective is assembled by composing them on one tape and
calling backward once. Pseudo-labels, indicator masks and mixed soft labels
are constants: gradients never flow through them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..backend import kernels as K
from ..data import onehot
from ..errors import ValidationError
from ..nn import Network
from ..tensor import Tape, Tensor, as_f64


@dataclass
class AdaptModel:
    """Feature extractor + label predictor, optionally with a domain head."""

    feature: Network
    label: Network
    domain: Network | None = None

    @property
    def n_classes(self) -> int:
        return self.label.out_dim

    def class_logits(self, tape: Tape, x, mode: str = "train", rng=None) -> Tensor:
        feats = self.feature.forward(tape, x, mode, rng)
        return self.label.forward(tape, feats, mode, rng)

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        named = {}
        named.update(self.feature.parameters(f"{prefix}feature."))
        named.update(self.label.parameters(f"{prefix}label."))
        if self.domain is not None:
            named.update(self.domain.parameters(f"{prefix}domain."))
        return named


def predict_probs(model: AdaptModel, x) -> np.ndarray:
    """Eval-mode class probabilities, detached from any training tape."""
    tape = Tape()
    logits = model.class_logits(tape, tape.constant(as_f64(x)), mode="eval")
    return K.softmax_fwd(logits.values)


def _require_batch(x, what: str) -> np.ndarray:
    arr = as_f64(x)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValidationError(f"{what} must be a nonempty [B,d] batch")
    return arr


# ------------------------------------------------------------------ baseline

def source_only_loss(tape: Tape, model: AdaptModel, x_s, labels_s, mode: str = "train") -> Tensor:
    """Cross-entropy of the label predictor on the labeled source batch."""
    x_s = _require_batch(x_s, "source batch")
    logits = model.class_logits(tape, x_s, mode)
    return tape.softmax_cross_entropy(logits, onehot(labels_s, model.n_classes))


# ---------------------------------------------------------------------- DANN

class DannLoss(NamedTuple):
    label: Tensor
    domain: Tensor
    total: Tensor


def dann_loss(tape: Tape, model: AdaptModel, x_s, labels_s, x_t, lam: float,
              rng=None, mode: str = "train") -> DannLoss:
    """Label loss on source plus domain loss over both domains.

    The shared features reach the domain classifier through gradient
    reversal, so minimising ``total`` with one optimizer drives the feature
    extractor adversarially (its feature gradient is the label-branch
    gradient minus lam times the domain-branch gradient) while the domain
    head itself trains by plain descent. Domain labels: 0 source, 1 target.
    """
    if lam < 0:
        raise ValidationError("lam must be nonnegative")
    x_s = _require_batch(x_s, "source batch")
    x_t = _require_batch(x_t, "target batch")
    n_s, n_t = x_s.shape[0], x_t.shape[0]
    feats = model.feature.forward(tape, np.vstack([x_s, x_t]), mode, rng)
    f_src = tape.take_rows(feats, np.arange(n_s))
    label_logits = model.label.forward(tape, f_src, mode, rng)
    label_loss = tape.softmax_cross_entropy(label_logits, onehot(labels_s, model.n_classes))
    reversed_feats = tape.grad_reverse(feats, lam)
    domain_logits = model.domain.forward(tape, reversed_feats, mode, rng)
    domain_target = onehot(np.concatenate([np.zeros(n_s, np.int64), np.ones(n_t, np.int64)]), 2)
    domain_loss = tape.softmax_cross_entropy(domain_logits, domain_target)
    return DannLoss(label_loss, domain_loss, tape.add(label_loss, domain_loss))


# ---------------------------------------------------------------------- MSTN

@dataclass
class MstnState:
    """Per-class feature centroids for both domains, tracked by moving average.

    ``ema`` is the retention weight on the previous centroid.
    """

    centroids_source: np.ndarray   # [K, D]
    centroids_target: np.ndarray   # [K, D]
    ema: float

    def __post_init__(self):
        self.centroids_source = as_f64(self.centroids_source)
        self.centroids_target = as_f64(self.centroids_target)
        if self.centroids_source.shape != self.centroids_target.shape:
            raise ValidationError("centroid banks must share a shape")
        if not 0.0 <= self.ema <= 1.0:
            raise ValidationError("ema must lie in [0, 1]")
        if not (np.isfinite(self.centroids_source).all() and np.isfinite(self.centroids_target).all()):
            raise ValidationError("centroids must be finite")

    @classmethod
    def zeros(cls, n_classes: int, dim: int, ema: float) -> "MstnState":
        return cls(np.zeros((n_classes, dim)), np.zeros((n_classes, dim)), ema)

    @property
    def n_classes(self) -> int:
        return self.centroids_source.shape[0]


def _ema_bank(prev: np.ndarray, feats: np.ndarray, labels: np.ndarray, ema: float) -> np.ndarray:
    out = prev.copy()
    for k in range(prev.shape[0]):
        members = feats[labels == k]
        if members.shape[0]:
            out[k] = ema * prev[k] + (1.0 - ema) * members.mean(axis=0)
    return out


def mstn_centroid_update(state: MstnState, feats_s, labels_s, feats_t, pseudo_t) -> MstnState:
    """Classes present in the batch move toward the batch mean; absent classes keep
    their previous centroid. The target side is grouped by argmax pseudo-labels."""
    feats_s, feats_t = as_f64(feats_s), as_f64(feats_t)
    labels_s = np.asarray(labels_s, np.int64)
    pseudo_t = np.asarray(pseudo_t, np.int64)
    return MstnState(
        _ema_bank(state.centroids_source, feats_s, labels_s, state.ema),
        _ema_bank(state.centroids_target, feats_t, pseudo_t, state.ema),
        state.ema,
    )


def mstn_semantic_loss(state: MstnState) -> float:
    """Sum over classes of the squared distance between the domain centroids."""
    diff = state.centroids_source - state.centroids_target
    return float((diff * diff).sum())


def _centroid_tensors(tape: Tape, prev: np.ndarray, feats: Tensor, labels: np.ndarray,
                      ema: float) -> list[Tensor]:
    banks = []
    for k in range(prev.shape[0]):
        rows = np.flatnonzero(labels == k)
        if rows.size:
            batch_mean = tape.col_mean(tape.take_rows(feats, rows))
            banks.append(tape.add(tape.scale(tape.constant(prev[k]), ema),
                                  tape.scale(batch_mean, 1.0 - ema)))
        else:
            banks.append(tape.constant(prev[k]))
    return banks


def mstn_total(tape: Tape, model: AdaptModel, state: MstnState, x_s, labels_s, x_t,
               lam: float, gamma: float, rng=None, mode: str = "train"):
    """Classification + lam * adversarial domain loss + gamma * centroid loss.

    With lam = gamma = 0 the returned total IS the source-only loss tensor.
    The centroid update is built in-graph so the semantic term backpropagates
    into the current batch's features; the returned state holds the detached
    updated centroids for the next step.

    Returns (total, parts, new_state).
    """
    if lam < 0 or gamma < 0:
        raise ValidationError("loss weights must be nonnegative")
    x_s = _require_batch(x_s, "source batch")
    x_t = _require_batch(x_t, "target batch")
    labels_s = np.asarray(labels_s, np.int64)
    if lam == 0 and gamma == 0:
        # degenerate weights: identical ops (and bits) to the plain source loss
        loss = source_only_loss(tape, model, x_s, labels_s, mode)
        return loss, {"label_ce": loss}, state
    n_s = x_s.shape[0]
    feats = model.feature.forward(tape, np.vstack([x_s, x_t]), mode, rng)
    f_src = tape.take_rows(feats, np.arange(n_s))
    f_tgt = tape.take_rows(feats, np.arange(n_s, n_s + x_t.shape[0]))
    label_logits = model.label.forward(tape, f_src, mode, rng)
    label_loss = tape.softmax_cross_entropy(label_logits, onehot(labels_s, model.n_classes))
    parts = {"label_ce": label_loss}
    total = label_loss
    if lam > 0:
        reversed_feats = tape.grad_reverse(feats, 1.0)
        domain_logits = model.domain.forward(tape, reversed_feats, mode, rng)
        domain_target = onehot(
            np.concatenate([np.zeros(n_s, np.int64), np.ones(x_t.shape[0], np.int64)]), 2
        )
        domain_loss = tape.softmax_cross_entropy(domain_logits, domain_target)
        parts["domain_ce"] = domain_loss
        total = tape.add(total, tape.scale(domain_loss, lam))
    pseudo_t = model.label.forward(tape, f_tgt, "eval").values.argmax(axis=1)
    if gamma > 0:
        banks_s = _centroid_tensors(tape, state.centroids_source, f_src, labels_s, state.ema)
        banks_t = _centroid_tensors(tape, state.centroids_target, f_tgt, pseudo_t, state.ema)
        semantic = None
        for cs, ct in zip(banks_s, banks_t):
            diff = tape.sub(cs, ct)
            term = tape.sum(tape.mul(diff, diff))
            semantic = term if semantic is None else tape.add(semantic, term)
        parts["semantic"] = semantic
        total = tape.add(total, tape.scale(semantic, gamma))
        new_state = MstnState(
            np.stack([b.values for b in banks_s]),
            np.stack([b.values for b in banks_t]),
            state.ema,
        )
    else:
        new_state = mstn_centroid_update(
            state, f_src.values, labels_s, f_tgt.values, pseudo_t
        )
    return total, parts, new_state


# --------------------------------------------------------------------- Fixbi

def fixbi_mix(x_s, y_s, x_t, y_t, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-ratio convex combination of paired source/target samples.

    ``y_s``/``y_t`` are [B,K] label rows (one-hot or soft); the mixed label
    rows again sum to one. Requires equally sized batches, which the concat
    batch plan guarantees.
    """
    if not 0.0 < lam < 1.0:
        raise ValidationError("mix ratio must lie in (0, 1)")
    x_s, x_t, y_s, y_t = as_f64(x_s), as_f64(x_t), as_f64(y_s), as_f64(y_t)
    if x_s.shape != x_t.shape or y_s.shape != y_t.shape:
        raise ValidationError("mixup needs equally sized source and target batches")
    return lam * x_s + (1.0 - lam) * x_t, lam * y_s + (1.0 - lam) * y_t


def fixbi_fm_loss(tape: Tape, model: AdaptModel, x_mix, y_mix, mode: str = "train") -> Tensor:
    """Mean cross-entropy of the model on mixed inputs against mixed soft labels."""
    x_mix = _require_batch(x_mix, "mixed batch")
    return tape.softmax_cross_entropy(model.class_logits(tape, x_mix, mode), as_f64(y_mix))


def bidirectional_loss(tape: Tape, teacher: AdaptModel, student: AdaptModel, x_t, tau: float,
                       mode: str = "train") -> Tensor:
    """Confident teacher pseudo-labels supervise the student.

    (1/B) * sum over samples with max teacher prob > tau of the student's
    cross-entropy against the teacher's argmax. Samples at or below tau
    contribute nothing; so does an empty selection.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValidationError("tau must lie in [0, 1]")
    x_t = _require_batch(x_t, "target batch")
    probs = predict_probs(teacher, x_t)
    selected = np.flatnonzero(probs.max(axis=1) > tau)
    if selected.size == 0:
        return tape.constant(0.0)
    hard = probs[selected].argmax(axis=1)
    logits = student.class_logits(tape, x_t[selected], mode)
    ce_mean = tape.softmax_cross_entropy(logits, onehot(hard, student.n_classes))
    return tape.scale(ce_mean, selected.size / x_t.shape[0])


def self_penalization_loss(tape: Tape, model: AdaptModel, x_t, tau: float,
                           mode: str = "train", eps: float = 1e-12) -> Tensor:
    """Push down the model's own low-confidence top-1 probability.

    (1/B) * sum over samples with max prob < tau of -log(1 - p_top1).
    The indicator requires p_top1 < tau <= 1, so 1 - p_top1 stays positive;
    the eps clamp guards the log anyway.
    """
    if not 0.0 < tau <= 1.0:
        raise ValidationError("tau must lie in (0, 1]")
    x_t = _require_batch(x_t, "target batch")
    probs = tape.softmax(model.class_logits(tape, x_t, mode))
    vals = probs.values
    selected = np.flatnonzero(vals.max(axis=1) < tau)
    if selected.size == 0:
        return tape.constant(0.0)
    mask = np.zeros_like(vals)
    mask[selected, vals[selected].argmax(axis=1)] = 1.0
    top1 = tape.row_sum(tape.mul(probs, mask))        # zero rows where unselected
    penalty = tape.neg(tape.log(tape.clip_min(tape.sub(1.0, top1), eps)))
    return tape.scale(tape.sum(penalty), 1.0 / x_t.shape[0])


def consistency_loss(tape: Tape, model_p: AdaptModel, model_q: AdaptModel, x_mix,
                     mode: str = "train") -> Tensor:
    """Mean squared distance between the two peers' predicted distributions
    on the same mixed batch; symmetric, zero iff the outputs agree."""
    x_mix = _require_batch(x_mix, "mixed batch")
    p = tape.softmax(model_p.class_logits(tape, x_mix, mode))
    q = tape.softmax(model_q.class_logits(tape, x_mix, mode))
    diff = tape.sub(p, q)
    return tape.scale(tape.sum(tape.mul(diff, diff)), 1.0 / x_mix.shape[0])


def update_threshold(confidences, lo: float = 0.5, hi: float = 0.99) -> float:
    """Adaptive confidence threshold: mean top-1 confidence, clamped to [lo, hi].

    Applied once per epoch over that epoch's target confidences.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    if conf.size == 0:
        raise ValidationError("need at least one confidence value")
    return float(min(max(conf.mean(), lo), hi))


# ----------------------------------------------------------------- DannFixbi

def dannfixbi_domain_loss(tape: Tape, variant: str, model: AdaptModel, x_s, x_t,
                          mix_lambda: float, grl_lambda: float = 1.0, rng=None,
                          mode: str = "train") -> Tensor:
    """Domain-classification loss for a peer network with a domain head.

    mixed: the head sees the fixed-ratio mixed batch and is scored against the
    soft domain label (mix_lambda, 1 - mix_lambda), which equals
    mix_lambda * CE(source label) + (1 - mix_lambda) * CE(target label).
    separate: the head sees the unmixed concatenated batch with hard domain
    labels, exactly like the adversarial baseline.
    """
    x_s = _require_batch(x_s, "source batch")
    x_t = _require_batch(x_t, "target batch")
    if model.domain is None:
        raise ValidationError("model has no domain head")
    if variant == "mixed":
        # endpoints are allowed here: they degrade to a hard domain label
        if not 0.0 <= mix_lambda <= 1.0:
            raise ValidationError("mix ratio must lie in [0, 1]")
        if x_s.shape != x_t.shape:
            raise ValidationError("mixed variant needs equally sized batches")
        x_mix = mix_lambda * x_s + (1.0 - mix_lambda) * x_t
        feats = model.feature.forward(tape, x_mix, mode, rng)
        logits = model.domain.forward(tape, tape.grad_reverse(feats, grl_lambda), mode, rng)
        soft = np.tile([mix_lambda, 1.0 - mix_lambda], (x_mix.shape[0], 1))
        return tape.softmax_cross_entropy(logits, soft)
    if variant == "separate":
        feats = model.feature.forward(tape, np.vstack([x_s, x_t]), mode, rng)
        logits = model.domain.forward(tape, tape.grad_reverse(feats, grl_lambda), mode, rng)
        hard = onehot(
            np.concatenate([np.zeros(x_s.shape[0], np.int64), np.ones(x_t.shape[0], np.int64)]), 2
        )
        return tape.softmax_cross_entropy(logits, hard)
    raise ValidationError(f"unknown domain-classifier variant {variant!r}")


def dannfixbi_total(tape: Tape, epoch: int, warmup_k: int, fm: Tensor, sp: Tensor,
                    bim: Tensor | None = None, cr: Tensor | None = None,
                    dom: Tensor | None = None, beta: float = 1.0, gamma: float = 1.0) -> Tensor:
    """beta * (fm + sp + gate * (bim + cr)) + gamma * dom, gate = epoch > warmup_k.

    Callers skip building bim/cr during warm-up; passing them while the gate
    is closed is rejected so gated terms can never leak gradients.
    """
    gate_open = epoch > warmup_k
    if not gate_open and (bim is not None or cr is not None):
        raise ValidationError("bim/cr must not be built during warm-up")
    fixbi = tape.add(fm, sp)
    if gate_open and bim is not None:
        fixbi = tape.add(fixbi, bim)
    if gate_open and cr is not None:
        fixbi = tape.add(fixbi, cr)
    total = tape.scale(fixbi, beta)
    if dom is not None:
        total = tape.add(total, tape.scale(dom, gamma))
    return total
