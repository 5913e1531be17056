# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: dense layer stack forward/backward and one MF SGD epoch.

Mirrors ``_pykernels`` exactly in semantics. Matrix products go through the
BLAS bundled with scipy; the elementwise bias/activation passes are fused C
loops, which is where numpy pays per-call overhead on the small batches the
policy and sampler feed in.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "compiled"


cdef void _matmul(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out, double beta) noexcept nogil:
    # row-major out = a @ b (+ beta*out) via column-major out^T = b^T a^T
    cdef char trans = b"N"
    cdef int m = b.shape[1]
    cdef int n = a.shape[0]
    cdef int k = a.shape[1]
    cdef double alpha = 1.0
    if m == 0 or n == 0:
        return
    if k == 0:
        return
    dgemm(&trans, &trans, &m, &n, &k, &alpha, &b[0, 0], &m, &a[0, 0], &k, &beta, &out[0, 0], &m)


cdef void _matmul_tn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out) noexcept nogil:
    # row-major out = a.T @ b
    cdef char tn = b"N"
    cdef char tt = b"T"
    cdef int m = b.shape[1]
    cdef int n = a.shape[1]
    cdef int k = a.shape[0]
    cdef double alpha = 1.0
    cdef double beta = 0.0
    if m == 0 or n == 0 or k == 0:
        return
    dgemm(&tn, &tt, &m, &n, &k, &alpha, &b[0, 0], &m, &a[0, 0], &n, &beta, &out[0, 0], &m)


cdef void _matmul_nt(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out) noexcept nogil:
    # row-major out = a @ b.T
    cdef char tn = b"N"
    cdef char tt = b"T"
    cdef int m = b.shape[0]
    cdef int n = a.shape[0]
    cdef int k = a.shape[1]
    cdef double alpha = 1.0
    cdef double beta = 0.0
    if m == 0 or n == 0 or k == 0:
        return
    dgemm(&tt, &tn, &m, &n, &k, &alpha, &b[0, 0], &k, &a[0, 0], &k, &beta, &out[0, 0], &m)


def mlp_forward(list weights, list biases, x, int relu):
    """Return the list of layer outputs, input first, linear output last."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t layer, r, c, rows, cols
    cdef double[:, ::1] h
    cdef double[:, ::1] hin
    cdef double[:, ::1] w
    cdef double[::1] b
    cdef double v
    acts = [np.ascontiguousarray(x, dtype=np.float64)]
    for layer in range(n_layers):
        w = weights[layer]
        b = biases[layer]
        prev = acts[layer]
        rows = prev.shape[0]
        cols = w.shape[1]
        out = np.empty((rows, cols), dtype=np.float64)
        h = out
        hin = prev
        with nogil:
            _matmul(hin, w, h, 0.0)
            for r in range(rows):
                for c in range(cols):
                    v = h[r, c] + b[c]
                    if layer < n_layers - 1:
                        if relu:
                            v = v if v > 0.0 else 0.0
                        else:
                            v = tanh(v)
                    h[r, c] = v
        acts.append(out)
    return acts


def mlp_backward(list weights, list acts, grad_out, int relu):
    """Reverse pass; returns (weight grads, bias grads, input grad), batch-summed."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t layer, r, c, rows, cols
    cdef double[:, ::1] g
    cdef double[:, ::1] hv
    cdef double[:, ::1] wv
    cdef double[:, ::1] gwv
    cdef double[:, ::1] pgv
    cdef double[::1] gbv
    cdef double acc, a
    grad = np.array(grad_out, dtype=np.float64, order="C", copy=True)
    gws = [None] * n_layers
    gbs = [None] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        g = grad
        rows = g.shape[0]
        cols = g.shape[1]
        gb = np.empty(cols, dtype=np.float64)
        gbv = gb
        with nogil:
            for c in range(cols):
                acc = 0.0
                for r in range(rows):
                    acc = acc + g[r, c]
                gbv[c] = acc
        gw = np.empty_like(weights[layer])
        hv = acts[layer]
        wv = weights[layer]
        gwv = gw
        prev_grad = np.empty((rows, weights[layer].shape[0]), dtype=np.float64)
        pgv = prev_grad
        with nogil:
            _matmul_tn(hv, g, gwv)
            _matmul_nt(g, wv, pgv)
        gws[layer] = gw
        gbs[layer] = gb
        if layer > 0:
            g = prev_grad
            cols = g.shape[1]
            with nogil:
                for r in range(rows):
                    for c in range(cols):
                        a = hv[r, c]
                        if relu:
                            if a <= 0.0:
                                g[r, c] = 0.0
                        else:
                            g[r, c] = g[r, c] * (1.0 - a * a)
        grad = prev_grad
    return gws, gbs, grad


def mf_sgd_epoch(long[::1] users, long[::1] items, double[::1] rewards, long[::1] order,
                 double[:, ::1] P, double[:, ::1] Q, double[::1] bu, double[::1] bi,
                 double mu, double lr, double reg):
    """One in-place SGD pass over events in ``order``; returns the summed squared error."""
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t d = P.shape[1]
    cdef Py_ssize_t j, f, u, i
    cdef double pred, err, pu, qi, sse = 0.0
    with nogil:
        for j in range(n):
            u = users[order[j]]
            i = items[order[j]]
            pred = mu + bu[u] + bi[i]
            for f in range(d):
                pred = pred + P[u, f] * Q[i, f]
            err = rewards[order[j]] - pred
            sse = sse + err * err
            bu[u] = bu[u] + lr * (err - reg * bu[u])
            bi[i] = bi[i] + lr * (err - reg * bi[i])
            for f in range(d):
                pu = P[u, f]
                qi = Q[i, f]
                P[u, f] = pu + lr * (err * qi - reg * pu)
                Q[i, f] = qi + lr * (err * pu - reg * qi)
    return sse
