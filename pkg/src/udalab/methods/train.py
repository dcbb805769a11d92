"""Shared training loop for all five methods.

One run owns its networks, tape-per-step graphs, optimizer state and RNG
streams, so many (method, seed) runs can execute in parallel processes with
no shared mutable state. Every random draw comes from a named stream derived
from (seed, stream name), which keeps methods comparable: runs that share a
component (e.g. the source batch order, or the feature/label initialisation)
draw identical values for it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, is_dataclass

import numpy as np

from ..data import (
    BatchPlan,
    DomainPair,
    RANDOM_AUGMENT_STEPS,
    augment_batch,
    epoch_batches,
    onehot,
)
from ..errors import NanLossError, ValidationError
from ..nn import ParamSet, init_network
from ..optim import (
    Adam,
    AdamConfig,
    CosineScheduleConfig,
    CustomScheduleConfig,
    Sgd,
    SgdConfig,
    cosine_lr,
    custom_lr,
)
from ..tensor import Tape
from .configs import (
    ArchConfig,
    DannConfig,
    DannFixbiConfig,
    FixbiConfig,
    METHOD_NAMES,
    MstnConfig,
    SourceOnlyConfig,
)
from . import losses as L
from .losses import AdaptModel, MstnState


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator keyed by (seed, stream name); stable across runs."""
    key = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


@dataclass(frozen=True)
class OptimSpec:
    """Optimizer plus learning-rate schedule selection for a run."""

    algorithm: str = "sgd"          # "sgd" | "adam"
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0005
    nesterov: bool = False
    scheduler: str = "none"         # "none" | "custom" | "cosine"
    eta0: float = 0.01
    alpha: float = 10.0
    beta: float = 0.75
    eta_min: float = 0.0

    def __post_init__(self):
        if self.algorithm not in ("sgd", "adam"):
            raise ValidationError("algorithm must be 'sgd' or 'adam'")
        if self.scheduler not in ("none", "custom", "cosine"):
            raise ValidationError("scheduler must be 'none', 'custom' or 'cosine'")

    def build(self):
        if self.algorithm == "sgd":
            return Sgd(SgdConfig(self.lr, self.momentum, self.weight_decay, self.nesterov))
        return Adam(AdamConfig(self.lr))


@dataclass(frozen=True)
class RunResult:
    """Per-epoch target accuracy trajectory of one seeded run.

    ``epoch_accuracy[0]`` is the untrained baseline, so the tuple has
    epochs + 1 entries and ``final_accuracy`` equals its last element.
    """

    method: str
    task: str
    seed: int
    epoch_accuracy: tuple[float, ...]
    final_accuracy: float
    config_hash: str

    def __post_init__(self):
        for acc in self.epoch_accuracy:
            if not 0.0 <= acc <= 100.0:
                raise ValidationError("accuracies must lie in [0, 100]")


def _to_plain(obj):
    if is_dataclass(obj):
        return {k: _to_plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def config_fingerprint(**parts) -> str:
    blob = json.dumps(_to_plain(parts), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _sigmoid_ramp(progress: float) -> float:
    return 2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0


def _grl_lambda(base: float, ramp: str, progress: float) -> float:
    return base * _sigmoid_ramp(progress) if ramp == "sigmoid" else base


# ------------------------------------------------------------ method runners

class _SourceOnly:
    needs_equal_batches = False

    def __init__(self, pair: DomainPair, cfg: SourceOnlyConfig, arch: ArchConfig,
                 seed: int, in_dim: int):
        k = pair.n_classes
        feat_dims = [in_dim, *arch.feature_hidden]
        self.model = AdaptModel(
            init_network("feature_extractor", feat_dims, 0.0, rng_stream(seed, "init.feature")),
            init_network("label_predictor", [feat_dims[-1], *arch.label_hidden, k], 0.0,
                         rng_stream(seed, "init.label")),
        )

    def params(self) -> ParamSet:
        return ParamSet(self.model.parameters())

    def eval_models(self) -> list[AdaptModel]:
        return [self.model]

    def step(self, tape: Tape, xs, ys, xt, epoch: int, progress: float):
        loss = L.source_only_loss(tape, self.model, xs, ys)
        return loss, {"label_ce": loss}

    def end_epoch(self, epoch: int) -> None:
        pass


def _domain_net(arch: ArchConfig, feat_dim: int, seed_stream) -> "init_network":
    dims = [feat_dim, *arch.domain_hidden, 2]
    return init_network("domain_classifier", dims, arch.domain_dropout, seed_stream)


class _Dann(_SourceOnly):
    def __init__(self, pair, cfg: DannConfig, arch, seed, in_dim):
        super().__init__(pair, SourceOnlyConfig(cfg.epochs), arch, seed, in_dim)
        self.cfg = cfg
        self.model.domain = _domain_net(arch, self.model.feature.out_dim,
                                        rng_stream(seed, "init.domain"))
        self._dropout_rng = rng_stream(seed, "dropout.domain")

    def step(self, tape, xs, ys, xt, epoch, progress):
        lam = _grl_lambda(self.cfg.lambda_grl, self.cfg.lambda_ramp, progress)
        parts = L.dann_loss(tape, self.model, xs, ys, xt, lam, rng=self._dropout_rng)
        return parts.total, {"label_ce": parts.label, "domain_ce": parts.domain}


class _Mstn(_SourceOnly):
    def __init__(self, pair, cfg: MstnConfig, arch, seed, in_dim):
        super().__init__(pair, SourceOnlyConfig(cfg.epochs), arch, seed, in_dim)
        self.cfg = cfg
        self.model.domain = _domain_net(arch, self.model.feature.out_dim,
                                        rng_stream(seed, "init.domain"))
        self._dropout_rng = rng_stream(seed, "dropout.domain")
        self.state = MstnState.zeros(pair.n_classes, self.model.feature.out_dim, cfg.ema)

    def step(self, tape, xs, ys, xt, epoch, progress):
        total, parts, self.state = L.mstn_total(
            tape, self.model, self.state, xs, ys, xt,
            self.cfg.lambda_dc, self.cfg.gamma_sm, rng=self._dropout_rng,
        )
        return total, parts


class _Fixbi:
    needs_equal_batches = True

    def __init__(self, pair: DomainPair, cfg: FixbiConfig | DannFixbiConfig,
                 arch: ArchConfig, seed: int, in_dim: int):
        self.cfg = cfg
        k = pair.n_classes
        self.n_classes = k
        feat_dims = [in_dim, *arch.feature_hidden]
        label_dims = [feat_dims[-1], *arch.label_hidden, k]
        self.sdm = AdaptModel(
            init_network("feature_extractor", feat_dims, 0.0, rng_stream(seed, "init.sdm.feature")),
            init_network("label_predictor", label_dims, 0.0, rng_stream(seed, "init.sdm.label")),
        )
        self.tdm = AdaptModel(
            init_network("feature_extractor", feat_dims, 0.0, rng_stream(seed, "init.tdm.feature")),
            init_network("label_predictor", label_dims, 0.0, rng_stream(seed, "init.tdm.label")),
        )
        self.tau = {"sdm": cfg.tau0, "tdm": cfg.tau0}
        self._epoch_conf = {"sdm": [], "tdm": []}

    @property
    def beta(self) -> float:
        return getattr(self.cfg, "beta", 1.0)

    @property
    def gamma_dom(self) -> float:
        return getattr(self.cfg, "gamma_dom", 0.0)

    def params(self) -> ParamSet:
        named = self.sdm.parameters("sdm.")
        named.update(self.tdm.parameters("tdm."))
        return ParamSet(named)

    def eval_models(self) -> list[AdaptModel]:
        return [self.sdm, self.tdm]

    def _domain_loss(self, tape, name, model, mix_lambda, xs, xt, progress):
        return None

    def step(self, tape, xs, ys, xt, epoch, progress):
        peers = (("sdm", self.sdm, self.cfg.lambda_sd, self.tdm, "tdm"),
                 ("tdm", self.tdm, self.cfg.lambda_td, self.sdm, "sdm"))
        y_onehot = onehot(ys, self.n_classes)
        gate_open = epoch > self.cfg.warmup_k
        total = None
        parts = {}
        for name, model, lam, peer, peer_name in peers:
            own_probs = L.predict_probs(model, xt)
            self._epoch_conf[name].append(own_probs.max(axis=1))
            pseudo = onehot(own_probs.argmax(axis=1), self.n_classes)
            x_mix, y_mix = L.fixbi_mix(xs, y_onehot, xt, pseudo, lam)
            fm = L.fixbi_fm_loss(tape, model, x_mix, y_mix)
            sp = L.self_penalization_loss(tape, model, xt, self.tau[name])
            bim = cr = None
            if gate_open:
                bim = L.bidirectional_loss(tape, peer, model, xt, self.tau[peer_name])
                cr = L.consistency_loss(tape, model, peer, x_mix)
            dom = self._domain_loss(tape, name, model, lam, xs, xt, progress)
            peer_total = L.dannfixbi_total(tape, epoch, self.cfg.warmup_k, fm, sp, bim, cr,
                                           dom, self.beta, self.gamma_dom)
            parts[f"{name}_fm"] = fm
            parts[f"{name}_sp"] = sp
            if bim is not None:
                parts[f"{name}_bim"] = bim
            if cr is not None:
                parts[f"{name}_cr"] = cr
            if dom is not None:
                parts[f"{name}_dom"] = dom
            total = peer_total if total is None else tape.add(total, peer_total)
        return total, parts

    def end_epoch(self, epoch: int) -> None:
        for name in ("sdm", "tdm"):
            if self._epoch_conf[name]:
                self.tau[name] = L.update_threshold(np.concatenate(self._epoch_conf[name]))
                self._epoch_conf[name] = []


class _DannFixbi(_Fixbi):
    def __init__(self, pair, cfg: DannFixbiConfig, arch, seed, in_dim):
        super().__init__(pair, cfg, arch, seed, in_dim)
        feat_dim = self.sdm.feature.out_dim
        self.sdm.domain = _domain_net(arch, feat_dim, rng_stream(seed, "init.sdm.domain"))
        self.tdm.domain = _domain_net(arch, feat_dim, rng_stream(seed, "init.tdm.domain"))
        self._dropout_rng = {"sdm": rng_stream(seed, "dropout.sdm.domain"),
                             "tdm": rng_stream(seed, "dropout.tdm.domain")}

    def _domain_loss(self, tape, name, model, mix_lambda, xs, xt, progress):
        grl = _grl_lambda(self.cfg.lambda_grl, self.cfg.lambda_ramp, progress)
        return L.dannfixbi_domain_loss(tape, self.cfg.variant, model, xs, xt, mix_lambda,
                                       grl, rng=self._dropout_rng[name])


_RUNNERS = {
    "source_only": _SourceOnly,
    "dann": _Dann,
    "mstn": _Mstn,
    "fixbi": _Fixbi,
    "dann_fixbi": _DannFixbi,
}


# ------------------------------------------------------------------ training

def _deterministic_pipeline(pipeline):
    """Eval-time variant of an augmentation pipeline: random steps dropped,
    random crops replaced by center crops so shapes stay consistent."""
    out = []
    for name, args in pipeline or ():
        if name == "random-crop":
            out.append(("center-crop", args))
        elif name in RANDOM_AUGMENT_STEPS:
            continue
        else:
            out.append((name, args))
    return out


def _target_accuracy(models: list[AdaptModel], eval_inputs, labels) -> float:
    probs = None
    for model in models:
        p = L.predict_probs(model, eval_inputs)
        probs = p if probs is None else probs + p
    predictions = probs.argmax(axis=1)
    return float(100.0 * (predictions == labels).mean())


def train(method: str, pair: DomainPair, method_cfg, optim_cfg: OptimSpec, plan: BatchPlan,
          seed: int, arch: ArchConfig = ArchConfig(), augment_pipeline=None,
          param_store: dict | None = None) -> RunResult:
    """Run one seeded training loop and score target accuracy each epoch.

    Deterministic under (configs, seed): identical inputs reproduce the
    RunResult bit for bit. A non-finite loss term aborts with the term name.
    When ``param_store`` is a dict it receives copies of the final parameter
    arrays by name (for checkpointing).
    """
    if method not in METHOD_NAMES:
        raise ValidationError(f"unknown method {method!r}")
    if plan.strategy != "concat" and getattr(method_cfg, "lambda_sd", None) is not None:
        # fixed-ratio mixup pairs samples one-to-one
        raise ValidationError(f"{method} requires the concat batching strategy")
    raster = pair.source.inputs.ndim == 3
    pipeline = list(augment_pipeline or [])
    if pipeline and not raster:
        raise ValidationError("augmentation pipelines apply to raster datasets only")

    def flatten(batch):
        return batch.reshape(batch.shape[0], -1) if batch.ndim == 3 else batch

    aug_rng = rng_stream(seed, "augment")

    def prep(batch):
        if raster and pipeline:
            batch = augment_batch(batch, pipeline, aug_rng)
        return flatten(batch)

    eval_steps = _deterministic_pipeline(pipeline)
    if raster and eval_steps:
        eval_inputs = flatten(augment_batch(pair.target.inputs, eval_steps, 0))
        probe = prep(pair.source.inputs[:1])
    else:
        eval_inputs = flatten(np.asarray(pair.target.inputs))
        probe = flatten(pair.source.inputs[:1])
    in_dim = probe.shape[1]

    runner = _RUNNERS[method](pair, method_cfg, arch, seed, in_dim)
    params = runner.params()
    optimizer = optim_cfg.build()
    epochs = method_cfg.epochs
    total_steps = max(plan.steps_per_epoch * epochs, 1)
    cosine_cfg = (CosineScheduleConfig(optim_cfg.lr, optim_cfg.eta_min, max(epochs, 1))
                  if optim_cfg.scheduler == "cosine" else None)
    custom_cfg = (CustomScheduleConfig(optim_cfg.eta0, optim_cfg.alpha, optim_cfg.beta)
                  if optim_cfg.scheduler == "custom" else None)
    batch_rng = rng_stream(seed, "batch")
    labels_eval = pair.evaluation_labels()
    fingerprint = config_fingerprint(
        method=method, method_cfg=method_cfg, optim=optim_cfg, plan=plan, arch=arch,
        dataset=pair.descriptor, augment=[list(map(str, step)) for step in pipeline],
    )

    source_inputs = np.asarray(pair.source.inputs)
    source_labels = pair.source.labels
    target_inputs = np.asarray(pair.target.inputs)

    accuracy_track = [_target_accuracy(runner.eval_models(), eval_inputs, labels_eval)]
    steps_done = 0
    for epoch in range(1, epochs + 1):
        if cosine_cfg is not None:
            optimizer.lr = cosine_lr(epoch - 1, cosine_cfg)
        for idx_s, idx_t in epoch_batches(plan, pair.source.n, pair.target.n, batch_rng):
            if custom_cfg is not None:
                optimizer.lr = custom_lr(steps_done / total_steps, custom_cfg)
            tape = Tape()
            params.watch_all(tape)
            xs = prep(source_inputs[idx_s])
            xt = prep(target_inputs[idx_t])
            loss, parts = runner.step(tape, xs, source_labels[idx_s], xt,
                                      epoch, steps_done / total_steps)
            for name, term in parts.items():
                if not np.isfinite(term.values).all():
                    raise NanLossError(
                        f"loss term '{name}' became non-finite at epoch {epoch}, "
                        f"step {steps_done} of method {method}"
                    )
            grads = tape.backward(loss)
            optimizer.step(params, grads)
            steps_done += 1
        runner.end_epoch(epoch)
        accuracy_track.append(_target_accuracy(runner.eval_models(), eval_inputs, labels_eval))
    if param_store is not None:
        for name, tensor in params.items():
            param_store[name] = tensor.values.copy()
    return RunResult(
        method=method,
        task=pair.task_name(),
        seed=seed,
        epoch_accuracy=tuple(accuracy_track),
        final_accuracy=accuracy_track[-1],
        config_hash=fingerprint,
    )
