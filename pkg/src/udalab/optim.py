"""Parameter update rules (SGD with momentum/Nesterov, Adam) and LR schedules.

Weight decay is folded into the gradient (coupled L2). Updates mutate
parameter arrays in place and are independent of iteration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OptimStateError, ValidationError
from .nn import ParamSet
from .tensor import GradMap


@dataclass(frozen=True)
class SgdConfig:
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    nesterov: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValidationError("momentum and weight_decay must be nonnegative")
        if self.nesterov and self.momentum <= 0:
            raise ValidationError("nesterov requires momentum > 0")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("betas must lie in [0, 1)")


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def _grad_for(params: ParamSet, grads, name: str) -> np.ndarray:
    tensor = params[name]
    if isinstance(grads, GradMap):
        if tensor not in grads:
            raise OptimStateError(f"no gradient recorded for parameter {name!r}")
        g = grads[tensor]
    else:
        if name not in grads:
            raise OptimStateError(f"no gradient recorded for parameter {name!r}")
        g = grads[name]
    if g.shape != tensor.values.shape:
        raise OptimStateError(f"gradient shape mismatch for {name!r}")
    return g


def sgd_step(params: ParamSet, grads, cfg: SgdConfig, state: dict) -> dict:
    """g <- grad + wd*p;  buf <- mu*buf + g;  p <- p - lr*(g + mu*buf | buf)."""
    for name, tensor in params.items():
        g = _grad_for(params, grads, name)
        p = tensor.values
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        if cfg.momentum:
            buf = state.get(name)
            buf = g.copy() if buf is None else cfg.momentum * buf + g
            state[name] = buf
            step_dir = g + cfg.momentum * buf if cfg.nesterov else buf
        else:
            step_dir = g
        p -= cfg.lr * step_dir
    return state


def adam_step(params: ParamSet, grads, cfg: AdamConfig, state: AdamState) -> AdamState:
    """Bias-corrected Adam with the usual defaults."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, tensor in params.items():
        g = _grad_for(params, grads, name)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - cfg.beta1) * g if m is None else cfg.beta1 * m + (1 - cfg.beta1) * g
        v = (1 - cfg.beta2) * g * g if v is None else cfg.beta2 * v + (1 - cfg.beta2) * g * g
        state.m[name], state.v[name] = m, v
        tensor.values -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return state


class Sgd:
    """Stateful wrapper around :func:`sgd_step`; ``lr`` is scheduler-mutable."""

    def __init__(self, cfg: SgdConfig):
        self.cfg = cfg
        self.lr = cfg.lr
        self._state: dict = {}

    def step(self, params: ParamSet, grads) -> None:
        cfg = SgdConfig(self.lr, self.cfg.momentum, self.cfg.weight_decay, self.cfg.nesterov)
        self._state = sgd_step(params, grads, cfg, self._state)


class Adam:
    """Stateful wrapper around :func:`adam_step`; ``lr`` is scheduler-mutable."""

    def __init__(self, cfg: AdamConfig):
        self.cfg = cfg
        self.lr = cfg.lr
        self._state = AdamState()

    def step(self, params: ParamSet, grads) -> None:
        cfg = AdamConfig(self.lr, self.cfg.beta1, self.cfg.beta2, self.cfg.eps)
        self._state = adam_step(params, grads, cfg, self._state)


# ------------------------------------------------------------------ schedules

@dataclass(frozen=True)
class CustomScheduleConfig:
    """Inverse-power decay eta_p = eta0 / (1 + alpha*p)^beta over run progress p."""

    eta0: float = 0.01
    alpha: float = 10.0
    beta: float = 0.75

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValidationError("eta0 must be positive")


@dataclass(frozen=True)
class CosineScheduleConfig:
    """Half-cosine decay from eta_max at T_cur=0 down to eta_min at T_cur=T_max."""

    eta_max: float
    eta_min: float = 0.0
    t_max: int = 1

    def __post_init__(self):
        if self.t_max < 1:
            raise ValidationError("t_max must be at least 1")
        if self.eta_min > self.eta_max:
            raise ValidationError("eta_min must not exceed eta_max")


def custom_lr(progress: float, cfg: CustomScheduleConfig = CustomScheduleConfig()) -> float:
    if not 0.0 <= progress <= 1.0:
        raise ValidationError("progress must lie in [0, 1]")
    return cfg.eta0 / (1.0 + cfg.alpha * progress) ** cfg.beta


def cosine_lr(t_cur: float, cfg: CosineScheduleConfig) -> float:
    if t_cur < 0 or t_cur > cfg.t_max:
        raise ValidationError("t_cur must lie in [0, t_max]")
    return cfg.eta_min + 0.5 * (cfg.eta_max - cfg.eta_min) * (1.0 + math.cos(math.pi * t_cur / cfg.t_max))
