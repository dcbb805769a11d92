"""Per-method hyperparameter dataclasses and the shared architecture config."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ValidationError

LAMBDA_RAMPS = ("constant", "sigmoid")


@dataclass(frozen=True)
class ArchConfig:
    """Desk-scale stand-in for the usual large backbone: a few dense layers.

    The feature extractor applies relu on every layer; the label predictor is
    two dense layers to the class logits; the domain classifier stacks three
    dense layers with dropout between the gaps.
    """

    feature_hidden: tuple[int, ...] = (16, 16)
    label_hidden: tuple[int, ...] = (16,)
    domain_hidden: tuple[int, ...] = (16, 16)
    domain_dropout: float = 0.5

    def __post_init__(self):
        for dims in (self.feature_hidden, self.label_hidden, self.domain_hidden):
            if not dims or any(int(d) < 1 for d in dims):
                raise ValidationError("hidden layer widths must be positive")
        if not 0.0 <= self.domain_dropout < 1.0:
            raise ValidationError("domain_dropout must lie in [0, 1)")


def _check_ramp(ramp: str) -> None:
    if ramp not in LAMBDA_RAMPS:
        raise ValidationError(f"lambda_ramp must be one of {LAMBDA_RAMPS}")


@dataclass(frozen=True)
class SourceOnlyConfig:
    epochs: int = 60

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be nonnegative")


@dataclass(frozen=True)
class DannConfig:
    lambda_grl: float = 1.0
    lambda_ramp: str = "constant"
    epochs: int = 60

    def __post_init__(self):
        if self.lambda_grl < 0:
            raise ValidationError("lambda_grl must be nonnegative")
        _check_ramp(self.lambda_ramp)
        if self.epochs < 0:
            raise ValidationError("epochs must be nonnegative")


@dataclass(frozen=True)
class MstnConfig:
    lambda_dc: float = 1.0
    gamma_sm: float = 1.0
    ema: float = 0.7
    epochs: int = 60

    def __post_init__(self):
        if self.lambda_dc < 0 or self.gamma_sm < 0:
            raise ValidationError("loss weights must be nonnegative")
        if not 0.0 <= self.ema <= 1.0:
            raise ValidationError("ema must lie in [0, 1]")
        if self.epochs < 0:
            raise ValidationError("epochs must be nonnegative")


@dataclass(frozen=True)
class FixbiConfig:
    lambda_sd: float = 0.7
    lambda_td: float = 0.3
    tau0: float = 0.95
    warmup_k: int = 100
    epochs: int = 150

    def __post_init__(self):
        for lam in (self.lambda_sd, self.lambda_td):
            if not 0.0 < lam < 1.0:
                raise ValidationError("mix ratios must lie in (0, 1)")
        # the two peer ratios are complementary for the plain method
        if abs(self.lambda_sd + self.lambda_td - 1.0) > 1e-9:
            raise ValidationError("lambda_sd + lambda_td must equal 1")
        if not 0.0 <= self.tau0 <= 1.0:
            raise ValidationError("tau0 must lie in [0, 1]")
        if self.warmup_k < 0 or self.epochs < 0:
            raise ValidationError("warmup_k and epochs must be nonnegative")


@dataclass(frozen=True)
class DannFixbiConfig:
    variant: str = "separate"      # "mixed" | "separate" domain classifier placement
    beta: float = 1.0              # weight on the peer-training objective
    gamma_dom: float = 1.0         # weight on the domain loss
    lambda_sd: float = 0.9
    lambda_td: float = 0.7
    tau0: float = 0.95
    warmup_k: int = 100
    lambda_grl: float = 1.0
    lambda_ramp: str = "constant"
    epochs: int = 150

    def __post_init__(self):
        if self.variant not in ("mixed", "separate"):
            raise ValidationError("variant must be 'mixed' or 'separate'")
        if self.beta < 0 or self.gamma_dom < 0:
            raise ValidationError("beta and gamma_dom must be nonnegative")
        for lam in (self.lambda_sd, self.lambda_td):
            if not 0.0 < lam < 1.0:
                raise ValidationError("mix ratios must lie in (0, 1)")
        if not 0.0 <= self.tau0 <= 1.0:
            raise ValidationError("tau0 must lie in [0, 1]")
        if self.lambda_grl < 0:
            raise ValidationError("lambda_grl must be nonnegative")
        _check_ramp(self.lambda_ramp)
        if self.warmup_k < 0 or self.epochs < 0:
            raise ValidationError("warmup_k and epochs must be nonnegative")


METHOD_CONFIGS = {
    "source_only": SourceOnlyConfig,
    "dann": DannConfig,
    "mstn": MstnConfig,
    "fixbi": FixbiConfig,
    "dann_fixbi": DannFixbiConfig,
}

METHOD_NAMES = tuple(METHOD_CONFIGS)
