"""Numba-compiled kernels. See :mod:`protofsl.kernels.numpy_impl` for semantics."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _pairwise(X, Y, out):
    n, d = X.shape
    m = Y.shape[0]
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(d):
                diff = X[i, t] - Y[j, t]
                acc += diff * diff
            out[i, j] = np.sqrt(acc)


def pairwise_distances(X, Y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    out = np.empty((X.shape[0], Y.shape[0]), dtype=np.float64)
    _pairwise(X, Y, out)
    return out


@njit(cache=True, nogil=True)
def _knn_rows(D, k, idx, val):
    n, m = D.shape
    for i in range(n):
        filled = 0
        for j in range(m):
            v = D[i, j]
            if v == np.inf:
                continue
            # strict comparison keeps earlier (lower) indices ahead on ties
            if filled == k and not v < val[i, k - 1]:
                continue
            pos = filled if filled < k else k - 1
            while pos > 0 and v < val[i, pos - 1]:
                val[i, pos] = val[i, pos - 1]
                idx[i, pos] = idx[i, pos - 1]
                pos -= 1
            val[i, pos] = v
            idx[i, pos] = j
            if filled < k:
                filled += 1


def knn_rows(D, k):
    D = np.ascontiguousarray(D, dtype=np.float64)
    idx = np.zeros((D.shape[0], k), dtype=np.int64)
    val = np.full((D.shape[0], k), np.inf)
    _knn_rows(D, k, idx, val)
    return idx, val


@njit(cache=True, nogil=True)
def _knn_graph(D, k, W):
    n = D.shape[0]
    masked = D.copy()
    for i in range(n):
        masked[i, i] = np.inf
    idx = np.zeros((n, k), dtype=np.int64)
    val = np.full((n, k), np.inf)
    _knn_rows(masked, k, idx, val)
    for i in range(n):
        for t in range(k):
            j = idx[i, t]
            W[i, j] = np.exp(-D[i, j])
            W[j, i] = np.exp(-D[j, i])


def knn_graph(D, k):
    D = np.ascontiguousarray(D, dtype=np.float64)
    W = np.zeros_like(D)
    _knn_graph(D, k, W)
    return W


@njit(cache=True, nogil=True)
def _neg_exp_normalize(D, out):
    n, m = D.shape
    for i in range(n):
        lo = np.inf
        for j in range(m):
            if D[i, j] < lo:
                lo = D[i, j]
        total = 0.0
        for j in range(m):
            e = np.exp(-(D[i, j] - lo))
            out[i, j] = e
            total += e
        for j in range(m):
            out[i, j] /= total


def neg_exp_normalize(D):
    D = np.ascontiguousarray(np.atleast_2d(D), dtype=np.float64)
    out = np.empty_like(D)
    _neg_exp_normalize(D, out)
    return out
