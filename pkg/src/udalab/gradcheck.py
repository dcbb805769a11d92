"""Finite-difference verification of the autodiff engine.

Builds random small classification graphs (relu feature stack, gradient
reversal into a second head, soft cross-entropy) and compares every
backpropagated parameter gradient against central finite differences.

Gradient reversal is checked against its defining surrogate: for parameters
upstream of the reversal the reference is the finite difference of
(label loss - lam * domain loss); for the heads it is the plain sum. That is
exactly the update-direction contract the reversal layer exists to produce.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import onehot
from .methods.losses import AdaptModel
from .nn import ParamSet, init_network
from .tensor import Tape, Tensor


def central_difference(f, arrays, h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of scalar ``f()`` w.r.t. each array entry.

    ``f`` must read the array objects in place; entries are perturbed and
    restored around each evaluation.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            hi = f()
            flat[i] = keep - h
            lo = f()
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """max |a-b| / max(|a|, |b|, floor); the floor keeps near-zero entries
    from amplifying finite-difference rounding noise."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


@dataclass(frozen=True)
class GradcheckReport:
    trials: int
    total_params: int
    max_rel_error: float
    elapsed_s: float

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def _random_case(rng: np.random.Generator):
    in_dim = int(rng.integers(2, 5))
    hidden = int(rng.integers(3, 7))
    n_classes = int(rng.integers(2, 4))
    batch = int(rng.integers(3, 6))
    lam = float(rng.choice([0.0, 0.5, 1.0, 2.0]))
    model = AdaptModel(
        init_network("feature_extractor", [in_dim, hidden], 0.0, rng),
        init_network("label_predictor", [hidden, hidden, n_classes], 0.0, rng),
        init_network("domain_classifier", [hidden, hidden, 2], 0.0, rng),
    )
    x = rng.normal(size=(batch, in_dim))
    y = onehot(rng.integers(0, n_classes, size=batch), n_classes)
    d = onehot(rng.integers(0, 2, size=batch), 2)
    return model, x, y, d, lam


def _build_loss(model: AdaptModel, x, y, d, lam: float, form: str) -> tuple[Tape, Tensor]:
    """form 'reversal': the trained graph; 'upstream'/'heads': the FD references."""
    tape = Tape()
    feats = model.feature.forward(tape, x, "eval")
    label_loss = tape.softmax_cross_entropy(model.label.forward(tape, feats, "eval"), y)
    if form == "reversal":
        domain_in = tape.grad_reverse(feats, lam)
        domain_loss = tape.softmax_cross_entropy(model.domain.forward(tape, domain_in, "eval"), d)
        return tape, tape.add(label_loss, domain_loss)
    domain_loss = tape.softmax_cross_entropy(model.domain.forward(tape, feats, "eval"), d)
    if form == "upstream":
        return tape, tape.add(label_loss, tape.scale(domain_loss, -lam))
    return tape, tape.add(label_loss, domain_loss)


def run_gradcheck(trials: int = 100, seed: int = 0, h: float = 1e-5) -> GradcheckReport:
    """Check ``trials`` random graphs; every graph stays under 200 parameters."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    total_params = 0
    started = time.time()
    for _ in range(trials):
        model, x, y, d, lam = _random_case(rng)
        params = ParamSet(model.parameters())
        total_params += params.total_size()
        tape, loss = _build_loss(model, x, y, d, lam, "reversal")
        grads = tape.backward(loss)
        # snapshot by name: the finite-difference forwards below remount the
        # parameters onto fresh tapes, which invalidates lookup by tensor
        ad = {name: grads[tensor].copy() for name, tensor in params.items()}

        def value_of(form):
            def call():
                _, scalar = _build_loss(model, x, y, d, lam, form)
                return float(scalar.values)
            return call

        for name, tensor in params.items():
            form = "upstream" if name.startswith("feature.") else "heads"
            reference = central_difference(value_of(form), [tensor.values], h)[0]
            worst = max(worst, relative_error(ad[name], reference))
    return GradcheckReport(trials, total_params, worst, time.time() - started)
