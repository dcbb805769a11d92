"""Dense networks for the three-part adversarial architecture.

Three roles exist: a feature extractor (relu on every layer), a label
predictor and a domain classifier (relu on hidden layers, linear output).
Parameters persist across training steps as off-tape tensors and are
remounted onto each step's fresh tape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import Tape, Tensor, as_f64

ROLES = ("feature_extractor", "label_predictor", "domain_classifier")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass
class DenseLayer:
    weight: Tensor          # [out, in]
    bias: Tensor            # [out]
    activation: str         # "relu" | "none"

    def __post_init__(self):
        if self.activation not in ("relu", "none"):
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.weight.values.ndim != 2 or self.bias.values.shape != (self.weight.values.shape[0],):
            raise ShapeError("bias shape must match the weight's output dimension")

    @property
    def out_dim(self) -> int:
        return self.weight.values.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.values.shape[1]


@dataclass
class Network:
    role: str
    layers: list[DenseLayer]
    dropout: tuple[float, ...] = field(default_factory=tuple)  # one rate per gap

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown network role {self.role!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError("consecutive layer dimensions do not chain")
        if len(self.dropout) != max(len(self.layers) - 1, 0):
            raise ValidationError("need one dropout rate per layer gap")
        for rate in self.dropout:
            if not 0.0 <= rate < 1.0:
                raise ValidationError("dropout rates must lie in [0, 1)")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, tape: Tape, x, mode: str = "train", rng=None) -> Tensor:
        """Compose dense layers with inverted dropout in the gaps.

        Train-mode dropout masks units with the gap's rate and scales the
        survivors by 1/(1-rate); eval mode applies no mask. The result is a
        pure function of (weights, input, mode, rng seed).
        """
        if mode not in ("train", "eval"):
            raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = tape._lift(x) if isinstance(x, Tensor) else tape.constant(as_f64(x))
        if x.values.ndim != 2 or x.values.shape[1] != self.in_dim:
            raise ShapeError(
                f"input of shape {x.values.shape} does not feed a {self.in_dim}-wide first layer"
            )
        needs_rng = mode == "train" and any(r > 0.0 for r in self.dropout)
        if needs_rng and rng is None:
            raise ValidationError("train-mode forward with dropout needs an rng or seed")
        gen = _rng(rng) if needs_rng else None
        out = x
        for i, layer in enumerate(self.layers):
            tape.watch(layer.weight)
            tape.watch(layer.bias)
            out = tape.dense(out, layer.weight, layer.bias)
            if layer.activation == "relu":
                out = tape.relu(out)
            if i < len(self.layers) - 1 and self.dropout[i] > 0.0 and mode == "train":
                rate = self.dropout[i]
                mask = (gen.random(out.values.shape) >= rate) / (1.0 - rate)
                out = tape.mul(out, mask)
        return out

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        named = {}
        for i, layer in enumerate(self.layers):
            named[f"{prefix}{i}.weight"] = layer.weight
            named[f"{prefix}{i}.bias"] = layer.bias
        return named


def init_network(role: str, dims, dropout=0.0, seed=0) -> Network:
    """Build a network with He-initialised weights and zero biases.

    ``dims`` chains input -> hidden... -> output widths. Hidden layers use
    relu; the final layer is linear (an embedding for the feature extractor,
    logits for the two classifier roles). A relu embedding admits an all-dead
    output state that adversarial feature gradients can drive networks into,
    so the linear variant is the only one offered. Deterministic under seed.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ValidationError("dims must list at least an input and an output width")
    if any(d < 1 for d in dims):
        raise ValidationError("all dims must be positive")
    if role not in ROLES:
        raise ValidationError(f"unknown network role {role!r}")
    n_layers = len(dims) - 1
    if np.isscalar(dropout):
        rates = (float(dropout),) * (n_layers - 1)
    else:
        rates = tuple(float(r) for r in dropout)
    gen = _rng(seed)
    layers = []
    for i in range(n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        std = np.sqrt(2.0 / fan_in)
        weight = Tensor(gen.normal(0.0, std, size=(fan_out, fan_in)), requires_grad=True)
        bias = Tensor(np.zeros(fan_out), requires_grad=True)
        activation = "none" if i == n_layers - 1 else "relu"
        layers.append(DenseLayer(weight, bias, activation))
    return Network(role, layers, rates)


def predict_logits(net: Network, x) -> np.ndarray:
    """Eval-mode forward on a throwaway tape; returns plain values."""
    tape = Tape()
    return net.forward(tape, tape.constant(as_f64(x)), mode="eval").values


class ParamSet:
    """Named, insertion-ordered collection of parameter tensors."""

    def __init__(self, named: dict[str, Tensor] | None = None):
        self._named: dict[str, Tensor] = {}
        for name, tensor in (named or {}).items():
            self.add(name, tensor)

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._named:
            raise ValidationError(f"duplicate parameter name {name!r}")
        self._named[name] = tensor

    def merge(self, other: "ParamSet | dict[str, Tensor]") -> None:
        items = other.items() if isinstance(other, ParamSet) else other.items()
        for name, tensor in items:
            self.add(name, tensor)

    def items(self):
        return self._named.items()

    def names(self):
        return list(self._named)

    def __getitem__(self, name: str) -> Tensor:
        return self._named[name]

    def __contains__(self, name: str) -> bool:
        return name in self._named

    def __len__(self) -> int:
        return len(self._named)

    def watch_all(self, tape: Tape) -> None:
        for tensor in self._named.values():
            tape.watch(tensor)

    def total_size(self) -> int:
        return sum(t.size for t in self._named.values())


CHECKPOINT_FORMAT = "udalab-params-v1"


def save_checkpoint(path, params) -> None:
    """Write parameters as a flat (name, shape, values) record list.

    JSON with repr-roundtripped floats: loading restores every float64
    bit-exactly. ``params`` is a ParamSet or a name -> Tensor/array mapping.
    """
    items = params.items() if hasattr(params, "items") else params
    records = []
    for name, tensor in items:
        arr = tensor.values if isinstance(tensor, Tensor) else as_f64(tensor)
        records.append(
            {"name": name, "shape": list(arr.shape), "values": [float(v) for v in arr.reshape(-1)]}
        )
    blob = {"format": CHECKPOINT_FORMAT, "records": records}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"not a {CHECKPOINT_FORMAT} checkpoint: {path}")
    out = {}
    for rec in blob["records"]:
        out[rec["name"]] = as_f64(rec["values"]).reshape(rec["shape"])
    return out


def restore_into(params: ParamSet, arrays: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into existing parameter tensors, by name."""
    for name, tensor in params.items():
        if name not in arrays:
            raise ValidationError(f"checkpoint is missing parameter {name!r}")
        if arrays[name].shape != tensor.values.shape:
            raise ShapeError(f"checkpoint shape mismatch for {name!r}")
        tensor.values[...] = arrays[name]
