"""Numpy reference implementation of the hot kernels.

This module is the import-time fallback when the compiled extension is absent
and the ground truth the compiled kernels are benchmarked and tested against.
Every function returns a freshly allocated float64 array.
"""

import numpy as np

NAME = "python"


def matmul_nn(a, b):
    """a[m,k] @ b[k,n] -> [m,n]."""
    return np.asarray(a @ b, dtype=np.float64)


def matmul_nt(a, b):
    """a[m,k] @ b[n,k].T -> [m,n]."""
    return np.asarray(a @ b.T, dtype=np.float64)


def matmul_tn(a, b):
    """a[k,m].T @ b[k,n] -> [m,n]."""
    return np.asarray(a.T @ b, dtype=np.float64)


def dense_fwd(x, w, b):
    """x[B,i] @ w[o,i].T + b[o] -> [B,o]."""
    return np.asarray(x @ w.T + b, dtype=np.float64)


def col_sum(g):
    """Sum over rows: g[B,o] -> [o]."""
    return np.asarray(g.sum(axis=0), dtype=np.float64)


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(g, x):
    return np.where(x > 0.0, g, 0.0)


def softmax_fwd(z):
    """Row softmax of z[B,K], shifted by the row max for stability."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(g, p):
    """dz given upstream g and cached probabilities p."""
    return p * (g - (g * p).sum(axis=1, keepdims=True))


def xent_fwd(z, t):
    """Mean soft cross-entropy of logits z[B,K] against target rows t[B,K].

    Returns (loss, p) where p are the cached softmax probabilities.
    Uses the log-sum-exp form so saturated logits stay finite.
    """
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = float(-(t * logp).sum() / z.shape[0])
    return loss, np.exp(logp)


def xent_bwd(p, t, g):
    """dz for the mean soft cross-entropy, upstream scalar gradient g."""
    return (p - t) * (g / p.shape[0])
