"""Training methods: source-only baseline, adversarial alignment, centroid
alignment, fixed-ratio peer training, and the combined peer+adversarial method."""

from .configs import (
    ArchConfig,
    DannConfig,
    DannFixbiConfig,
    FixbiConfig,
    METHOD_CONFIGS,
    METHOD_NAMES,
    MstnConfig,
    SourceOnlyConfig,
)
from .losses import (
    AdaptModel,
    DannLoss,
    MstnState,
    bidirectional_loss,
    consistency_loss,
    dann_loss,
    dannfixbi_domain_loss,
    dannfixbi_total,
    fixbi_fm_loss,
    fixbi_mix,
    mstn_centroid_update,
    mstn_semantic_loss,
    mstn_total,
    predict_probs,
    self_penalization_loss,
    source_only_loss,
    update_threshold,
)
from .train import OptimSpec, RunResult, config_fingerprint, rng_stream, train

__all__ = [
    "AdaptModel", "ArchConfig", "DannConfig", "DannFixbiConfig", "DannLoss",
    "FixbiConfig", "METHOD_CONFIGS", "METHOD_NAMES", "MstnConfig", "MstnState",
    "OptimSpec", "RunResult", "SourceOnlyConfig", "bidirectional_loss",
    "config_fingerprint", "consistency_loss", "dann_loss", "dannfixbi_domain_loss",
    "dannfixbi_total", "fixbi_fm_loss", "fixbi_mix", "mstn_centroid_update",
    "mstn_semantic_loss", "mstn_total", "predict_probs", "rng_stream",
    "self_penalization_loss", "source_only_loss", "train", "update_threshold",
]
