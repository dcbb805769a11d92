"""udalab: a desk-scale unsupervised domain adaptation laboratory.

Five training methods (source-only, adversarial feature alignment, moving
centroid alignment, fixed-ratio peer training and the combined peer +
adversarial method) on a self-contained reverse-mode autodiff engine, with
synthetic domain-shift datasets, dual-domain batch planning and a
signed-rank evaluation protocol.
"""

__version__ = "0.1.0"

from .backend import BACKEND
from .tensor import GradMap, Tape, Tensor

__all__ = ["BACKEND", "GradMap", "Tape", "Tensor", "__version__"]
