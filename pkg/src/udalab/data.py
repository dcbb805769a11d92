"""Synthetic domain-shift datasets, dual-domain batch planning, raster augmentation.

Domain pairs stand in for photo benchmarks at desk scale: two interleaved
half-circles with a rotated copy (binary), Gaussian blobs with a mean offset
(multi-class) and procedurally drawn digit glyphs with an intensity/noise
shift (raster, to exercise the augmentation pipeline).

Target labels are sealed: the target LabeledSet carries ``labels=None`` and
the ground truth is reachable only through ``DomainPair.evaluation_labels``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .tensor import as_f64


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def onehot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


@dataclass(frozen=True)
class LabeledSet:
    """Inputs plus class labels for one domain; labels may be hidden (None)."""

    inputs: np.ndarray            # [N,d] features or [N,H,W] raster
    labels: np.ndarray | None     # int class indices in [0,K), or None when sealed
    domain: str                   # "source" | "target"
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "inputs", _freeze(as_f64(self.inputs)))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape[0] != self.inputs.shape[0]:
                raise ValidationError("labels length must equal the number of inputs")
            if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
                raise ValidationError("labels must lie in [0, n_classes)")
            object.__setattr__(self, "labels", _freeze(labels))
        if self.domain not in ("source", "target"):
            raise ValidationError("domain must be 'source' or 'target'")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def flat_inputs(self) -> np.ndarray:
        """Raster sets flattened to [N, H*W]; feature sets unchanged."""
        if self.inputs.ndim == 2:
            return self.inputs
        return self.inputs.reshape(self.inputs.shape[0], -1)


class DomainPair:
    """A labeled source set plus an unlabeled target set with sealed ground truth."""

    def __init__(self, source: LabeledSet, target_inputs, target_labels, descriptor: dict):
        if source.labels is None:
            raise ValidationError("the source set must be labeled")
        self.source = source
        self.target = LabeledSet(target_inputs, None, "target", source.n_classes)
        sealed = np.asarray(target_labels, dtype=np.int64)
        if sealed.shape[0] != self.target.n:
            raise ValidationError("target label count must match target inputs")
        self._sealed_labels = _freeze(sealed)
        self.descriptor = dict(descriptor)

    @property
    def n_classes(self) -> int:
        return self.source.n_classes

    def evaluation_labels(self) -> np.ndarray:
        """Ground-truth target labels. For scoring only, never for training."""
        return self._sealed_labels

    def task_name(self) -> str:
        gen = self.descriptor.get("generator", "unknown")
        params = self.descriptor.get("params", {})
        inner = ",".join(f"{k}={params[k]}" for k in sorted(params))
        return f"{gen}({inner})"


# --------------------------------------------------------------------- moons

def gen_two_moons(n: int, noise: float, seed=0, domain: str = "source") -> LabeledSet:
    """Two interleaved half-circles with Gaussian jitter.

    Class 0 sits on the upper unit arc (cos t, sin t), class 1 on the lower
    arc (1 - cos t, 0.5 - sin t), angles evenly spaced over [0, pi]. Classes
    are balanced (class 0 takes the extra point for odd n).
    """
    if n < 2:
        raise ValidationError("need at least 2 samples")
    if noise < 0:
        raise ValidationError("noise must be nonnegative")
    n0 = (n + 1) // 2
    n1 = n - n0
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, max(n1, 1))[:n1]
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    inputs = np.vstack([upper, lower])
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise > 0:
        inputs = inputs + _rng(seed).normal(0.0, noise, size=inputs.shape)
    return LabeledSet(inputs, labels, domain, 2)


def shift_domain(dataset: LabeledSet, transform: str, value) -> LabeledSet:
    """Covariate shift on the inputs; labels untouched.

    Transforms: rotate(angle degrees, about the origin, 2-d inputs only),
    translate(vector), scale(factor).
    """
    x = dataset.inputs
    if transform == "rotate":
        angle = math.radians(float(value))
        if not math.isfinite(angle):
            raise ValidationError("rotation angle must be finite")
        if x.ndim != 2 or x.shape[1] != 2:
            raise ValidationError("rotate is defined for 2-d feature inputs")
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        shifted = x @ rot.T
    elif transform == "translate":
        vec = as_f64(value)
        if not np.isfinite(vec).all():
            raise ValidationError("translation vector must be finite")
        shifted = x + vec
    elif transform == "scale":
        factor = float(value)
        if not math.isfinite(factor):
            raise ValidationError("scale factor must be finite")
        shifted = x * factor
    else:
        raise ValidationError(f"unknown transform {transform!r}")
    return LabeledSet(shifted, dataset.labels, dataset.domain, dataset.n_classes)


def make_moons_pair(n: int, noise: float, angle: float, seed=0) -> DomainPair:
    """Source moons plus an independently drawn, rotated target copy."""
    base = np.random.SeedSequence(seed).spawn(2)
    source = gen_two_moons(n, noise, np.random.default_rng(base[0]), domain="source")
    target_raw = gen_two_moons(n, noise, np.random.default_rng(base[1]), domain="target")
    target = shift_domain(target_raw, "rotate", angle)
    descriptor = {
        "generator": "two_moons_rotated",
        "params": {"n": n, "noise": noise, "angle": angle, "seed": seed},
    }
    return DomainPair(source, target.inputs, target_raw.labels, descriptor)


# --------------------------------------------------------------------- blobs

def circle_means(n_classes: int, radius: float = 3.0) -> np.ndarray:
    """Class means evenly spaced on a circle, a convenient blob layout."""
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def gen_blobs_shift(
    n_classes: int,
    n_per_class: int,
    source_means,
    target_mean_offset,
    std: float,
    seed=0,
) -> DomainPair:
    """Gaussian clusters per class; target means = source means + offset."""
    if n_classes < 2:
        raise ValidationError("need at least 2 classes")
    if n_per_class < 1:
        raise ValidationError("need at least 1 sample per class")
    if std < 0:
        raise ValidationError("std must be nonnegative")
    means = as_f64(source_means)
    if means.shape[0] != n_classes:
        raise ValidationError("one mean per class required")
    offset = as_f64(target_mean_offset)
    gen = _rng(seed)
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), n_per_class)

    def draw(cls_means):
        centers = cls_means[labels]
        jitter = gen.normal(0.0, 1.0, size=centers.shape) * std if std > 0 else 0.0
        return centers + jitter

    src = LabeledSet(draw(means), labels, "source", n_classes)
    tgt_inputs = draw(means + offset)
    descriptor = {
        "generator": "blobs",
        "params": {
            "classes": n_classes,
            "n_per_class": n_per_class,
            "offset": [float(v) for v in np.atleast_1d(offset).reshape(-1)],
            "std": std,
            "seed": seed if isinstance(seed, int) else "generator",
        },
    }
    return DomainPair(src, tgt_inputs, labels.copy(), descriptor)


# -------------------------------------------------------------------- digits

# 7-segment layout: (top, top-right, bottom-right, bottom, bottom-left, top-left, middle)
_SEGMENTS = {
    0: (1, 1, 1, 1, 1, 1, 0),
    1: (0, 1, 1, 0, 0, 0, 0),
    2: (1, 1, 0, 1, 1, 0, 1),
    3: (1, 1, 1, 1, 0, 0, 1),
    4: (0, 1, 1, 0, 0, 1, 1),
    5: (1, 0, 1, 1, 0, 1, 1),
    6: (1, 0, 1, 1, 1, 1, 1),
    7: (1, 1, 1, 0, 0, 0, 0),
    8: (1, 1, 1, 1, 1, 1, 1),
    9: (1, 1, 1, 1, 0, 1, 1),
}


def draw_glyph(digit: int, size: int = 12) -> np.ndarray:
    """Procedurally drawn seven-segment digit on a size x size grid, in [0,1]."""
    if digit not in _SEGMENTS:
        raise ValidationError("glyphs exist for digits 0-9")
    img = np.zeros((size, size))
    pad, w = max(size // 6, 1), max(size // 8, 1)
    top, mid, bot = pad, size // 2, size - 1 - pad
    left, right = pad, size - 1 - pad
    seg = _SEGMENTS[digit]
    if seg[0]:
        img[top:top + w, left:right + 1] = 1.0
    if seg[1]:
        img[top:mid + 1, right - w + 1:right + 1] = 1.0
    if seg[2]:
        img[mid:bot + 1, right - w + 1:right + 1] = 1.0
    if seg[3]:
        img[bot - w + 1:bot + 1, left:right + 1] = 1.0
    if seg[4]:
        img[mid:bot + 1, left:left + w] = 1.0
    if seg[5]:
        img[top:mid + 1, left:left + w] = 1.0
    if seg[6]:
        img[mid - w // 2:mid - w // 2 + w, left:right + 1] = 1.0
    return img


def gen_digits_pair(
    n_classes: int,
    n_per_class: int,
    noise_source: float = 0.05,
    noise_target: float = 0.15,
    target_intensity: float = 0.6,
    seed=0,
    size: int = 12,
) -> DomainPair:
    """Raster glyph pair: clean bright source, dimmed noisier target."""
    if not 2 <= n_classes <= 10:
        raise ValidationError("digit pairs support 2 to 10 classes")
    if n_per_class < 1:
        raise ValidationError("need at least 1 sample per class")
    gen = _rng(seed)
    glyphs = np.stack([draw_glyph(d, size) for d in range(n_classes)])
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), n_per_class)

    def draw(intensity, noise):
        base = glyphs[labels] * intensity
        return np.clip(base + gen.normal(0.0, noise, size=base.shape), 0.0, 1.0)

    src = LabeledSet(draw(1.0, noise_source), labels, "source", n_classes)
    tgt_inputs = draw(target_intensity, noise_target)
    descriptor = {
        "generator": "digits",
        "params": {
            "classes": n_classes,
            "n_per_class": n_per_class,
            "noise_source": noise_source,
            "noise_target": noise_target,
            "target_intensity": target_intensity,
            "size": size,
            "seed": seed if isinstance(seed, int) else "generator",
        },
    }
    return DomainPair(src, tgt_inputs, labels.copy(), descriptor)


# ------------------------------------------------------------ batch planning

@dataclass(frozen=True)
class BatchPlan:
    strategy: str          # "proportional" | "concat"
    batch_source: int
    batch_target: int
    repeats: int           # times the smaller domain is tiled (concat), else 1
    steps_per_epoch: int


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def plan_batches(strategy: str, n_source: int, n_target: int, budget: int) -> BatchPlan:
    """Allocate per-domain batch sizes for dual-domain iteration.

    proportional: split ``budget`` samples per step across the domains in
    proportion to their sizes, rounding half-up with the contested unit going
    to the larger domain. concat: ``budget`` is the per-domain batch size;
    the smaller domain is tiled ceil(larger/smaller) times so every step
    pairs equally sized batches.
    """
    if n_source < 1 or n_target < 1:
        raise ValidationError("both domains need at least one sample")
    if budget < 2:
        raise ValidationError("budget must be at least 2")
    if strategy == "proportional":
        total = n_source + n_target
        b_s = _round_half_up(budget * n_source / total)
        b_t = _round_half_up(budget * n_target / total)
        if b_s + b_t == budget + 1:
            # both fractional parts were .5: the larger domain keeps the round-up
            if n_source >= n_target:
                b_t -= 1
            else:
                b_s -= 1
        # degenerate size ratios can starve a domain; keep one sample flowing
        if b_s == 0:
            b_s, b_t = 1, budget - 1
        if b_t == 0:
            b_s, b_t = budget - 1, 1
        n_big, b_big = max((n_source, b_s), (n_target, b_t))
        steps = math.ceil(n_big / b_big)
        return BatchPlan("proportional", b_s, b_t, 1, steps)
    if strategy == "concat":
        small, large = min(n_source, n_target), max(n_source, n_target)
        repeats = math.ceil(large / small)
        steps = math.ceil(large / budget)
        return BatchPlan("concat", budget, budget, repeats, steps)
    raise ValidationError(f"unknown batching strategy {strategy!r}")


def epoch_batches(plan: BatchPlan, n_source: int, n_target: int, rng) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-step (source indices, target indices) for one epoch.

    concat: both streams are truncated at the larger domain's length, so
    every larger-domain sample appears exactly once and the tiled overhang of
    the smaller domain is dropped. proportional: each domain's shuffled
    permutation is tiled to cover all steps at its planned batch size.
    """
    gen = _rng(rng)
    perm_s = gen.permutation(n_source)
    perm_t = gen.permutation(n_target)
    if plan.strategy == "concat":
        length = max(n_source, n_target)
        stream_s = np.tile(perm_s, math.ceil(length / n_source))[:length]
        stream_t = np.tile(perm_t, math.ceil(length / n_target))[:length]
        return [
            (stream_s[i * plan.batch_source:(i + 1) * plan.batch_source],
             stream_t[i * plan.batch_target:(i + 1) * plan.batch_target])
            for i in range(plan.steps_per_epoch)
        ]
    need_s = plan.steps_per_epoch * plan.batch_source
    need_t = plan.steps_per_epoch * plan.batch_target
    stream_s = np.tile(perm_s, math.ceil(need_s / n_source))[:need_s]
    stream_t = np.tile(perm_t, math.ceil(need_t / n_target))[:need_t]
    return [
        (stream_s[i * plan.batch_source:(i + 1) * plan.batch_source],
         stream_t[i * plan.batch_target:(i + 1) * plan.batch_target])
        for i in range(plan.steps_per_epoch)
    ]


# -------------------------------------------------------------- augmentation

#: steps that consume randomness; the rest are deterministic and also run at eval
RANDOM_AUGMENT_STEPS = ("random-crop", "horizontal-flip", "vertical-flip", "rotation", "color-jitter")
AUGMENT_STEPS = (
    "normalize", "resize", "random-crop", "center-crop",
    "horizontal-flip", "vertical-flip", "rotation", "color-jitter",
)


def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = img.shape
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)
    wx = np.clip(xs - x0, 0.0, 1.0)
    top = img[y0, x0] * (1 - wx) + img[y0, x1] * wx
    bot = img[y1, x0] * (1 - wx) + img[y1, x1] * wx
    out = top * (1 - wy) + bot * wy
    inside = (ys >= -0.5) & (ys <= h - 0.5) & (xs >= -0.5) & (xs <= w - 0.5)
    return np.where(inside, out, 0.0)


def augment(image, pipeline: Sequence[tuple], rng=None) -> np.ndarray:
    """Apply an ordered raster pipeline; deterministic under the rng seed.

    Each step is (name, args): normalize(mean, std), resize(h, w),
    random-crop(h, w), center-crop(h, w), horizontal-flip(p),
    vertical-flip(p), rotation(max_angle_deg), color-jitter(brightness).
    """
    img = as_f64(image).copy()
    if img.ndim != 2:
        raise ValidationError("augment expects a single H x W image")
    gen = _rng(rng if rng is not None else 0)
    for name, args in pipeline:
        if name == "normalize":
            mean, std = float(args[0]), float(args[1])
            if std == 0:
                raise ValidationError("normalize std must be nonzero")
            if std < 0:
                raise ValidationError("normalize std must be positive")
            img = (img - mean) / std
        elif name == "resize":
            h, w = int(args[0]), int(args[1])
            ys = (np.arange(h) + 0.5) * img.shape[0] / h - 0.5
            xs = (np.arange(w) + 0.5) * img.shape[1] / w - 0.5
            img = _bilinear_sample(img, *np.meshgrid(ys, xs, indexing="ij"))
        elif name == "random-crop":
            h, w = int(args[0]), int(args[1])
            if h > img.shape[0] or w > img.shape[1]:
                raise ValidationError("crop larger than the image")
            oy = int(gen.integers(0, img.shape[0] - h + 1))
            ox = int(gen.integers(0, img.shape[1] - w + 1))
            img = img[oy:oy + h, ox:ox + w].copy()
        elif name == "center-crop":
            h, w = int(args[0]), int(args[1])
            if h > img.shape[0] or w > img.shape[1]:
                raise ValidationError("crop larger than the image")
            oy = (img.shape[0] - h) // 2
            ox = (img.shape[1] - w) // 2
            img = img[oy:oy + h, ox:ox + w].copy()
        elif name == "horizontal-flip":
            p = float(args[0])
            if not 0.0 <= p <= 1.0:
                raise ValidationError("flip probability must lie in [0,1]")
            if gen.random() < p:
                img = img[:, ::-1].copy()
        elif name == "vertical-flip":
            p = float(args[0])
            if not 0.0 <= p <= 1.0:
                raise ValidationError("flip probability must lie in [0,1]")
            if gen.random() < p:
                img = img[::-1, :].copy()
        elif name == "rotation":
            max_angle = float(args[0])
            angle = math.radians(gen.uniform(-max_angle, max_angle))
            h, w = img.shape
            cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
            yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
            c, s = math.cos(angle), math.sin(angle)
            # inverse map: sample the source location of each output pixel
            ys = c * yy + s * xx + cy
            xs = -s * yy + c * xx + cx
            img = _bilinear_sample(img, ys, xs)
        elif name == "color-jitter":
            brightness = float(args[0])
            if brightness < 0:
                raise ValidationError("brightness jitter must be nonnegative")
            img = img * gen.uniform(1.0 - brightness, 1.0 + brightness)
        else:
            raise ValidationError(f"unknown augmentation step {name!r}")
    return img


def augment_batch(images, pipeline: Sequence[tuple], rng=None) -> np.ndarray:
    """Apply ``augment`` per image with one shared random stream."""
    gen = _rng(rng if rng is not None else 0)
    return np.stack([augment(img, pipeline, gen) for img in images])


# --------------------------------------------------------------------- cache

def save_pair(path, pair: DomainPair) -> None:
    """Columnar cache: source/target inputs and labels plus the generator
    descriptor. Target labels are stored under an eval-only key."""
    np.savez(
        path,
        source_inputs=pair.source.inputs,
        source_labels=pair.source.labels,
        target_inputs=pair.target.inputs,
        target_labels_eval_only=pair.evaluation_labels(),
        n_classes=np.asarray(pair.n_classes),
        descriptor=np.frombuffer(json.dumps(pair.descriptor, sort_keys=True).encode(), dtype=np.uint8),
    )


def load_pair(path) -> DomainPair:
    with np.load(path) as blob:
        descriptor = json.loads(bytes(blob["descriptor"]).decode())
        source = LabeledSet(
            blob["source_inputs"], blob["source_labels"], "source", int(blob["n_classes"])
        )
        return DomainPair(source, blob["target_inputs"], blob["target_labels_eval_only"], descriptor)


def validate_cache(pair: DomainPair, descriptor: dict) -> None:
    """Raise if a cached pair was generated with a different configuration."""
    if pair.descriptor != descriptor:
        raise ValidationError(
            f"cache descriptor {pair.descriptor} does not match the configured {descriptor}"
        )
