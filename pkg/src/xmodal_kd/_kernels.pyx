# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense-layer kernels for the MLP training loop.

Same contract as :mod:`xmodal_kd._reference`. Matrix products go straight to
BLAS ``dgemm`` through scipy's Cython bindings, skipping numpy's per-call
dispatch, which dominates at these layer widths. Arrays are C-contiguous
float64; BLAS sees them as column-major transposes.
"""
import numpy as np

from libc.math cimport exp, isfinite, log
from scipy.linalg.cython_blas cimport dgemm


cdef inline void _gemm(char *ta, char *tb, int m, int n, int k,
                       double *a, int lda, double *b, int ldb,
                       double beta, double *c, int ldc) noexcept nogil:
    cdef double one = 1.0
    dgemm(ta, tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)


cdef void _dense(double[:, ::1] W, double[::1] b, double[:, ::1] X,
                 double[:, ::1] out, bint relu) noexcept nogil:
    # out = X @ W.T + b, i.e. out^T = W^T^T X^T in column-major terms
    cdef int n = X.shape[0], m = W.shape[0], d = W.shape[1]
    cdef Py_ssize_t r, j
    cdef double s
    for r in range(n):
        for j in range(m):
            out[r, j] = b[j]
    _gemm(b"T", b"N", m, n, d, &W[0, 0], d, &X[0, 0], d, 1.0, &out[0, 0], m)
    if relu:
        for r in range(n):
            for j in range(m):
                s = out[r, j]
                if s < 0.0:
                    out[r, j] = 0.0


def forward_batch(list weights, list biases, x):
    cdef Py_ssize_t i, L = len(weights)
    cdef double[:, ::1] cur = x
    cdef double[:, ::1] out
    acts = [x]
    for i in range(L):
        W = weights[i]
        arr = np.empty((cur.shape[0], W.shape[0]), dtype=np.float64)
        out = arr
        _dense(W, biases[i], cur, out, i < L - 1)
        acts.append(arr)
        cur = out
    return acts


cdef void _layer_grads(double[:, ::1] delta, double[:, ::1] A,
                       double[:, ::1] gW, double[::1] gb) noexcept nogil:
    # gW = delta.T @ A  ->  gW^T = A^T delta   (column-major)
    cdef int n = delta.shape[0], m = delta.shape[1], d = A.shape[1]
    cdef Py_ssize_t r, j
    _gemm(b"N", b"T", d, m, n, &A[0, 0], d, &delta[0, 0], m, 0.0, &gW[0, 0], d)
    for j in range(m):
        gb[j] = 0.0
    for r in range(n):
        for j in range(m):
            gb[j] = gb[j] + delta[r, j]


cdef void _back_delta(double[:, ::1] delta, double[:, ::1] W,
                      double[:, ::1] A, double[:, ::1] out) noexcept nogil:
    # out = (delta @ W) * (A > 0)  ->  out^T = W^T delta^T   (column-major)
    cdef int n = delta.shape[0], m = delta.shape[1], d = W.shape[1]
    cdef Py_ssize_t r, k
    _gemm(b"N", b"N", d, n, m, &W[0, 0], d, &delta[0, 0], m, 0.0, &out[0, 0], d)
    for r in range(n):
        for k in range(d):
            if A[r, k] <= 0.0:
                out[r, k] = 0.0


def backward_batch(list weights, list acts, dlogits):
    cdef Py_ssize_t i, L = len(weights)
    cdef double[:, ::1] delta = dlogits
    cdef double[:, ::1] nd
    grads_w = [None] * L
    grads_b = [None] * L
    for i in range(L - 1, -1, -1):
        W = weights[i]
        gW = np.empty_like(W)
        gb = np.empty(W.shape[0], dtype=np.float64)
        _layer_grads(delta, acts[i], gW, gb)
        grads_w[i] = gW
        grads_b[i] = gb
        if i > 0:
            arr = np.empty((delta.shape[0], W.shape[1]), dtype=np.float64)
            nd = arr
            _back_delta(delta, W, acts[i], nd)
            delta = nd
    return grads_w, grads_b


cdef bint _all_finite(const double[::1] g) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(g.shape[0]):
        if not isfinite(g[i]):
            return False
    return True


cdef void _axpy_neg(double[::1] p, const double[::1] g, double lr) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(p.shape[0]):
        p[i] = p[i] - lr * g[i]


def sgd_update(list params, list grads, double lr):
    """In-place ``p = p - lr * g``; returns False (params untouched) on non-finite grads."""
    cdef Py_ssize_t i, n = len(params)
    for i in range(n):
        if not _all_finite(grads[i].reshape(-1)):
            return False
    for i in range(n):
        _axpy_neg(params[i].reshape(-1), grads[i].reshape(-1), lr)
    return True


cdef list _grads_into(list weights, list acts, double[:, ::1] delta):
    """Backprop ``delta`` through all layers; returns [gW0, gb0, gW1, gb1, ...]."""
    cdef Py_ssize_t i, L = len(weights)
    cdef double[:, ::1] nd
    out = [None] * (2 * L)
    for i in range(L - 1, -1, -1):
        W = weights[i]
        gW = np.empty_like(W)
        gb = np.empty(W.shape[0], dtype=np.float64)
        _layer_grads(delta, acts[i], gW, gb)
        out[2 * i] = gW
        out[2 * i + 1] = gb
        if i > 0:
            arr = np.empty((delta.shape[0], W.shape[1]), dtype=np.float64)
            nd = arr
            _back_delta(delta, W, acts[i], nd)
            delta = nd
    return out


cdef bint _apply(list weights, list biases, list grads, double lr):
    cdef Py_ssize_t i, L = len(weights)
    cdef double[:, ::1] W, gW
    for i in range(2 * L):
        if not _all_finite(grads[i].reshape(-1)):
            return False
    for i in range(L):
        _axpy_neg(weights[i].reshape(-1), grads[2 * i].reshape(-1), lr)
        _axpy_neg(biases[i], grads[2 * i + 1], lr)
    return True


def backward_sgd(list weights, list biases, list acts, dlogits, double lr):
    """Backprop then ``p = p - lr * g``; False (params untouched) on non-finite grads."""
    return _apply(weights, biases, _grads_into(weights, acts, dlogits), lr)


def ce_step(list weights, list biases, x, const long[::1] labels, double lr, double[::1] loss_out):
    """One softmax cross-entropy SGD step on a batch, mean-reduced over rows.

    Per-row losses (probability clamped at 1e-12) go to ``loss_out``.
    """
    cdef double[:, ::1] z
    cdef double[:, ::1] dz
    cdef Py_ssize_t n, C, r, j
    cdef double m, s, p
    acts = forward_batch(weights, biases, x)
    z = acts[len(acts) - 1]
    n = z.shape[0]
    C = z.shape[1]
    dz_arr = np.empty((n, C), dtype=np.float64)
    dz = dz_arr
    with nogil:
        for r in range(n):
            m = z[r, 0]
            for j in range(1, C):
                if z[r, j] > m:
                    m = z[r, j]
            s = 0.0
            for j in range(C):
                dz[r, j] = exp(z[r, j] - m)
                s = s + dz[r, j]
            for j in range(C):
                dz[r, j] = dz[r, j] / s
            p = dz[r, labels[r]]
            loss_out[r] = -log(p if p > 1e-12 else 1e-12)
            dz[r, labels[r]] = p - 1.0
            for j in range(C):
                dz[r, j] = dz[r, j] / n
    return _apply(weights, biases, _grads_into(weights, acts, dz), lr)
