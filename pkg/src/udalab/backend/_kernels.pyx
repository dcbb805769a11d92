# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner-loop kernels: matmul variants, fused dense layer, softmax.

Signatures mirror kernels_py; arrays are C-contiguous float64 throughout.
The gemm-shaped kernels call BLAS directly (through scipy's exported dgemm)
so the heavy lifting matches numpy's while the per-call dispatch cost is a
plain C call; the softmax and cross-entropy kernels fuse what the fallback
spells out as several numpy passes.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "compiled"


cdef void _gemm_rm(char ta, char tb, int m, int n, int k,
                   const double* a, int lda, const double* b, int ldb,
                   double beta, double* c, int ldc) noexcept nogil:
    # row-major C[m,n] = op(A) @ op(B) via the column-major identity
    # C^T = op(B)^T @ op(A)^T; callers pass the swapped operands.
    cdef double one = 1.0
    dgemm(&ta, &tb, &m, &n, &k, &one,
          <double*> a, &lda, <double*> b, &ldb, &beta, c, &ldc)


def matmul_nn(const double[:, ::1] a, const double[:, ::1] b):
    # C[m,n] = a[m,k] @ b[k,n]
    cdef int m = <int> a.shape[0], k = <int> a.shape[1], n = <int> b.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        _gemm_rm(b'N', b'N', n, m, k, &b[0, 0], n, &a[0, 0], k, 0.0, &out[0, 0], n)
    return out_arr


def matmul_nt(const double[:, ::1] a, const double[:, ::1] b):
    # C[m,n] = a[m,k] @ b[n,k].T
    cdef int m = <int> a.shape[0], k = <int> a.shape[1], n = <int> b.shape[0]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        _gemm_rm(b'T', b'N', n, m, k, &b[0, 0], k, &a[0, 0], k, 0.0, &out[0, 0], n)
    return out_arr


def matmul_tn(const double[:, ::1] a, const double[:, ::1] b):
    # C[m,n] = a[k,m].T @ b[k,n]
    cdef int k = <int> a.shape[0], m = <int> a.shape[1], n = <int> b.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        _gemm_rm(b'N', b'T', n, m, k, &b[0, 0], n, &a[0, 0], m, 0.0, &out[0, 0], n)
    return out_arr


def dense_fwd(const double[:, ::1] x, const double[:, ::1] w, const double[::1] b):
    # x[B,i] @ w[o,i].T + b[o]; the bias seeds the output and gemm adds onto it
    cdef int rows = <int> x.shape[0], nin = <int> x.shape[1], nout = <int> w.shape[0]
    out_arr = np.empty((rows, nout), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c
    with nogil:
        for r in range(rows):
            for c in range(nout):
                out[r, c] = b[c]
        _gemm_rm(b'T', b'N', nout, rows, nin, &w[0, 0], nin, &x[0, 0], nin, 1.0, &out[0, 0], nout)
    return out_arr


def col_sum(const double[:, ::1] g):
    cdef Py_ssize_t rows = g.shape[0], cols = g.shape[1]
    out_arr = np.zeros(cols, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t r, c
    with nogil:
        for r in range(rows):
            for c in range(cols):
                out[c] += g[r, c]
    return out_arr


def relu_fwd(x):
    x_arr = np.ascontiguousarray(x, dtype=np.float64)
    out_arr = np.empty_like(x_arr)
    _relu_fwd_flat(x_arr.reshape(-1), out_arr.reshape(-1))
    return out_arr


def relu_bwd(g, x):
    g_arr = np.ascontiguousarray(g, dtype=np.float64)
    x_arr = np.ascontiguousarray(x, dtype=np.float64)
    out_arr = np.empty_like(g_arr)
    _relu_bwd_flat(g_arr.reshape(-1), x_arr.reshape(-1), out_arr.reshape(-1))
    return out_arr


cdef void _relu_fwd_flat(const double[::1] x, double[::1] out) noexcept:
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            out[i] = x[i] if x[i] > 0.0 else 0.0


cdef void _relu_bwd_flat(const double[::1] g, const double[::1] x, double[::1] out) noexcept:
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            out[i] = g[i] if x[i] > 0.0 else 0.0


def softmax_fwd(const double[:, ::1] z):
    cdef Py_ssize_t rows = z.shape[0], cols = z.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] p = out_arr
    cdef Py_ssize_t r, c
    cdef double m, s
    with nogil:
        for r in range(rows):
            m = z[r, 0]
            for c in range(1, cols):
                if z[r, c] > m:
                    m = z[r, c]
            s = 0.0
            for c in range(cols):
                p[r, c] = exp(z[r, c] - m)
                s += p[r, c]
            for c in range(cols):
                p[r, c] /= s
    return out_arr


def softmax_bwd(const double[:, ::1] g, const double[:, ::1] p):
    cdef Py_ssize_t rows = p.shape[0], cols = p.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] dz = out_arr
    cdef Py_ssize_t r, c
    cdef double dot
    with nogil:
        for r in range(rows):
            dot = 0.0
            for c in range(cols):
                dot += g[r, c] * p[r, c]
            for c in range(cols):
                dz[r, c] = p[r, c] * (g[r, c] - dot)
    return out_arr


def xent_fwd(const double[:, ::1] z, const double[:, ::1] t):
    cdef Py_ssize_t rows = z.shape[0], cols = z.shape[1]
    p_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] p = p_arr
    cdef Py_ssize_t r, c
    cdef double m, s, lse, loss = 0.0
    with nogil:
        for r in range(rows):
            m = z[r, 0]
            for c in range(1, cols):
                if z[r, c] > m:
                    m = z[r, c]
            s = 0.0
            for c in range(cols):
                p[r, c] = exp(z[r, c] - m)
                s += p[r, c]
            lse = log(s)
            for c in range(cols):
                loss -= t[r, c] * (z[r, c] - m - lse)
                p[r, c] /= s
    return loss / rows, p_arr


def xent_bwd(const double[:, ::1] p, const double[:, ::1] t, double g):
    cdef Py_ssize_t rows = p.shape[0], cols = p.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] dz = out_arr
    cdef double scale = g / rows
    cdef Py_ssize_t r, c
    with nogil:
        for r in range(rows):
            for c in range(cols):
                dz[r, c] = (p[r, c] - t[r, c]) * scale
    return out_arr
