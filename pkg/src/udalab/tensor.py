"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records operations in creation order (which is already
topological), so the backward sweep is a single reversed pass that touches
each node exactly once. Tapes are rebuilt per training step; a tape and its
tensors form one single-threaded unit of work.

The op set is the small fixed one the training methods need: matmul, a fused
dense layer, elementwise {relu, log, exp, neg, add, sub, mul, scale}, row
softmax, soft-target cross-entropy, gradient reversal, reductions, row
gather and a minimum clamp.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from .backend import kernels as K
from .errors import NumericDomainError, ShapeError, TapeError, ValidationError

Array = np.ndarray

#: (parent node id, pull function mapping upstream grad -> parent grad contribution)
_Pull = tuple[int, Callable[[Array], Array]]


def as_f64(values) -> Array:
    """Coerce to a C-contiguous float64 array (0-d stays 0-d)."""
    arr = np.asarray(values, dtype=np.float64)
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


class Tensor:
    """Dense float64 array, optionally attached to a tape node.

    ``node_id`` is the handle into the active tape and is ``None`` for
    constants (targets, masks, detached values).
    """

    __slots__ = ("values", "node_id", "requires_grad", "tape")

    def __init__(self, values, requires_grad: bool = False):
        self.values = as_f64(values)
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self.tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def detach(self) -> "Tensor":
        """Constant copy of this tensor (no tape attachment)."""
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        tag = f"node={self.node_id}" if self.node_id is not None else "const"
        return f"Tensor(shape={self.shape}, {tag}, requires_grad={self.requires_grad})"


class GradMap(Mapping):
    """Node id -> gradient array, with lookup by tensor for convenience.

    Tensor lookups resolve through the tensor's current node id, so consume a
    GradMap before remounting its parameters onto another tape.
    """

    def __init__(self, grads: dict[int, Array]):
        self._grads = grads

    @staticmethod
    def _key(key) -> int:
        if isinstance(key, Tensor):
            if key.node_id is None:
                raise KeyError("tensor is not attached to a tape")
            return key.node_id
        return int(key)

    def __getitem__(self, key) -> Array:
        return self._grads[self._key(key)]

    def __contains__(self, key) -> bool:
        try:
            return self._key(key) in self._grads
        except KeyError:
            return False

    def __iter__(self):
        return iter(self._grads)

    def __len__(self) -> int:
        return len(self._grads)


class Tape:
    """Ordered record of differentiable operations (define-by-run)."""

    def __init__(self):
        self._shapes: list[tuple[int, ...]] = []     # per node
        self._requires: list[bool] = []              # per node
        self._records: list[tuple[int, tuple[_Pull, ...]]] = []

    def __len__(self) -> int:
        return len(self._shapes)

    # ---------------------------------------------------------------- leaves

    def constant(self, values) -> Tensor:
        """Off-tape tensor; no gradient ever flows into it."""
        return Tensor(values)

    def watch(self, tensor: Tensor) -> Tensor:
        """Register an existing tensor as a leaf of this tape (remounts freely)."""
        if tensor.tape is self and tensor.node_id is not None:
            return tensor
        tensor.node_id = self._new_node(tensor.values.shape, tensor.requires_grad)
        tensor.tape = self
        return tensor

    def parameter(self, values) -> Tensor:
        """New requires-grad leaf on this tape."""
        return self.watch(Tensor(values, requires_grad=True))

    def _new_node(self, shape: tuple[int, ...], requires: bool) -> int:
        self._shapes.append(shape)
        self._requires.append(requires)
        return len(self._shapes) - 1

    def _lift(self, value) -> Tensor:
        if isinstance(value, Tensor):
            if value.node_id is not None and value.tape is not self:
                raise TapeError("tensor belongs to a different tape")
            return value
        return Tensor(value)

    def _emit(self, values: Array, pulls: Iterable[_Pull]) -> Tensor:
        """Record an op result; results of all-constant inputs stay constant."""
        out = Tensor(values)
        pulls = tuple(pulls)
        if pulls:
            out.node_id = self._new_node(out.values.shape, False)
            out.tape = self
            self._records.append((out.node_id, pulls))
        return out

    # ------------------------------------------------------------------- ops

    def matmul(self, a, b) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        av, bv = a.values, b.values
        if av.ndim != 2 or bv.ndim != 2:
            raise ShapeError(f"matmul expects 2-d operands, got {av.shape} and {bv.shape}")
        if av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul inner dimensions disagree: {av.shape} x {bv.shape}")
        pulls = []
        if a.node_id is not None:
            pulls.append((a.node_id, lambda g, bv=bv: K.matmul_nt(g, bv)))
        if b.node_id is not None:
            pulls.append((b.node_id, lambda g, av=av: K.matmul_tn(av, g)))
        return self._emit(K.matmul_nn(av, bv), pulls)

    def dense(self, x, w, b) -> Tensor:
        """Fused x @ w.T + b with w[out,in], b[out]; the training hot path."""
        x, w, b = self._lift(x), self._lift(w), self._lift(b)
        xv, wv, bv = x.values, w.values, b.values
        if xv.ndim != 2 or wv.ndim != 2 or bv.ndim != 1:
            raise ShapeError("dense expects x[B,i], w[o,i], b[o]")
        if xv.shape[1] != wv.shape[1] or wv.shape[0] != bv.shape[0]:
            raise ShapeError(f"dense shapes disagree: x{xv.shape} w{wv.shape} b{bv.shape}")
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g, wv=wv: K.matmul_nn(g, wv)))
        if w.node_id is not None:
            pulls.append((w.node_id, lambda g, xv=xv: K.matmul_tn(g, xv)))
        if b.node_id is not None:
            pulls.append((b.node_id, lambda g: K.col_sum(g)))
        return self._emit(K.dense_fwd(xv, wv, bv), pulls)

    # -- elementwise family ---------------------------------------------------

    def elementwise(self, kind: str, *operands) -> Tensor:
        ops = {
            "relu": self.relu, "log": self.log, "exp": self.exp, "neg": self.neg,
            "add": self.add, "sub": self.sub, "mul": self.mul, "scale": self.scale,
        }
        if kind not in ops:
            raise ValidationError(f"unknown elementwise kind {kind!r}")
        return ops[kind](*operands)

    @staticmethod
    def _pair_shapes(av: Array, bv: Array) -> None:
        # only scalar-vs-tensor broadcasting is supported
        if av.shape != bv.shape and av.ndim != 0 and bv.ndim != 0:
            raise ShapeError(f"shapes {av.shape} and {bv.shape} neither match nor broadcast a scalar")

    @staticmethod
    def _fit(grad: Array, shape: tuple[int, ...]) -> Array:
        # reduce a broadcast gradient back onto a scalar operand
        if shape == ():
            return np.asarray(grad.sum())
        return grad

    def add(self, a, b) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        self._pair_shapes(a.values, b.values)
        pulls = []
        if a.node_id is not None:
            pulls.append((a.node_id, lambda g, s=a.shape: self._fit(+g, s)))
        if b.node_id is not None:
            pulls.append((b.node_id, lambda g, s=b.shape: self._fit(+g, s)))
        return self._emit(a.values + b.values, pulls)

    def sub(self, a, b) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        self._pair_shapes(a.values, b.values)
        pulls = []
        if a.node_id is not None:
            pulls.append((a.node_id, lambda g, s=a.shape: self._fit(+g, s)))
        if b.node_id is not None:
            pulls.append((b.node_id, lambda g, s=b.shape: self._fit(-g, s)))
        return self._emit(a.values - b.values, pulls)

    def mul(self, a, b) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        self._pair_shapes(a.values, b.values)
        av, bv = a.values, b.values
        pulls = []
        if a.node_id is not None:
            pulls.append((a.node_id, lambda g, o=bv, s=a.shape: self._fit(g * o, s)))
        if b.node_id is not None:
            pulls.append((b.node_id, lambda g, o=av, s=b.shape: self._fit(g * o, s)))
        return self._emit(av * bv, pulls)

    def scale(self, x, c: float) -> Tensor:
        x = self._lift(x)
        c = float(c)
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g: c * g))
        return self._emit(x.values * c, pulls)

    def neg(self, x) -> Tensor:
        x = self._lift(x)
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g: -g))
        return self._emit(-x.values, pulls)

    def relu(self, x) -> Tensor:
        x = self._lift(x)
        xv = x.values
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g, xv=xv: K.relu_bwd(g, xv)))
        return self._emit(K.relu_fwd(xv), pulls)

    def log(self, x) -> Tensor:
        x = self._lift(x)
        xv = x.values
        if xv.size and xv.min() <= 0.0:
            raise NumericDomainError("log requires strictly positive inputs")
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g, xv=xv: g / xv))
        return self._emit(np.log(xv), pulls)

    def exp(self, x) -> Tensor:
        x = self._lift(x)
        out = np.exp(x.values)
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g, o=out: g * o))
        return self._emit(out, pulls)

    def clip_min(self, x, floor: float) -> Tensor:
        """max(x, floor); gradient passes only where x > floor."""
        x = self._lift(x)
        xv = x.values
        floor = float(floor)
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g, xv=xv: np.where(xv > floor, g, 0.0)))
        return self._emit(np.maximum(xv, floor), pulls)

    # -- softmax / losses -------------------------------------------------------

    def softmax(self, logits) -> Tensor:
        x = self._lift(logits)
        if x.values.ndim != 2:
            raise ShapeError("softmax expects logits[B,K]")
        p = K.softmax_fwd(x.values)
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g, p=p: K.softmax_bwd(g, p)))
        return self._emit(p, pulls)

    def softmax_cross_entropy(self, logits, target) -> Tensor:
        """Mean over the batch of -sum_k target_k * log softmax(logits)_k.

        ``target`` rows are soft or one-hot distributions and are treated as
        constants (no gradient flows into them).
        """
        x = self._lift(logits)
        t = target.values if isinstance(target, Tensor) else as_f64(target)
        zv = x.values
        if zv.ndim != 2 or zv.shape[1] < 2:
            raise ValidationError("cross-entropy expects logits[B,K] with K >= 2")
        if t.shape != zv.shape:
            raise ShapeError(f"target shape {t.shape} does not match logits {zv.shape}")
        if zv.shape[0] == 0:
            raise ValidationError("cross-entropy over an empty batch")
        row_sums = t.sum(axis=1)
        if np.abs(row_sums - 1.0).max() > 1e-9:
            raise ValidationError("cross-entropy target rows must sum to 1 within 1e-9")
        loss, p = K.xent_fwd(zv, t)
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g, p=p, t=t: K.xent_bwd(p, t, float(g))))
        return self._emit(np.asarray(loss), pulls)

    def grad_reverse(self, x, lam: float) -> Tensor:
        """Identity forward; backward multiplies the upstream gradient by -lam."""
        x = self._lift(x)
        lam = float(lam)
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g: (-lam) * g))
        # shares the forward buffer: bit-identical by construction
        return self._emit(x.values, pulls)

    # -- reductions / indexing ---------------------------------------------------

    def sum(self, x) -> Tensor:
        x = self._lift(x)
        shape = x.shape
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g, s=shape: np.full(s, float(g))))
        return self._emit(np.asarray(x.values.sum()), pulls)

    def mean(self, x) -> Tensor:
        x = self._lift(x)
        shape, n = x.shape, max(x.size, 1)
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g, s=shape, n=n: np.full(s, float(g) / n)))
        return self._emit(np.asarray(x.values.mean()), pulls)

    def row_sum(self, x) -> Tensor:
        x = self._lift(x)
        if x.values.ndim != 2:
            raise ShapeError("row_sum expects a 2-d tensor")
        shape = x.shape
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g, s=shape: np.broadcast_to(g[:, None], s).copy()))
        return self._emit(x.values.sum(axis=1), pulls)

    def col_mean(self, x) -> Tensor:
        """Mean over rows: [N,D] -> [D]."""
        x = self._lift(x)
        if x.values.ndim != 2:
            raise ShapeError("col_mean expects a 2-d tensor")
        shape, n = x.shape, x.values.shape[0]
        pulls = []
        if x.node_id is not None:
            pulls.append((x.node_id, lambda g, s=shape, n=n: np.broadcast_to(g / n, s).copy()))
        return self._emit(x.values.mean(axis=0), pulls)

    def take_rows(self, x, indices) -> Tensor:
        x = self._lift(x)
        idx = np.asarray(indices, dtype=np.intp)
        if x.values.ndim != 2:
            raise ShapeError("take_rows expects a 2-d tensor")
        shape = x.shape
        pulls = []
        if x.node_id is not None:
            def pull(g, idx=idx, s=shape):
                out = np.zeros(s)
                np.add.at(out, idx, g)
                return out
            pulls.append((x.node_id, pull))
        return self._emit(x.values[idx].copy(), pulls)

    # -------------------------------------------------------------- backward

    def backward(self, loss: Tensor) -> GradMap:
        """Gradients of a scalar loss for every requires-grad node on this tape.

        Nodes the loss does not reach get zero-filled gradients.
        """
        if not isinstance(loss, Tensor) or loss.node_id is None or loss.tape is not self:
            raise TapeError("loss is detached from this tape")
        if loss.values.shape != ():
            raise ValidationError(f"loss must be scalar, got shape {loss.values.shape}")
        acc: dict[int, Array] = {loss.node_id: np.asarray(1.0)}
        for out_id, pulls in reversed(self._records):
            g = acc.get(out_id)
            if g is None:
                continue
            for pid, pull in pulls:
                contrib = pull(g)
                prev = acc.get(pid)
                if prev is None:
                    acc[pid] = contrib
                else:
                    prev += contrib  # pull results are freshly allocated
        grads = {
            nid: acc.get(nid, np.zeros(self._shapes[nid]))
            for nid, req in enumerate(self._requires)
            if req
        }
        return GradMap(grads)
