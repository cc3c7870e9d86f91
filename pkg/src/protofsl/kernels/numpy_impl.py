"""Pure-numpy versions of the hot kernels.

Semantics match :mod:`protofsl.kernels.numba_impl` exactly: distances are
computed from explicit differences (no ``|x|^2 + |y|^2 - 2xy`` expansion, so
a point has distance exactly 0 to itself), and neighbor ties go to the lower
column index.
"""

import numpy as np

# rows of X processed per block in pairwise_distances; bounds the n*m*d temporary
_BLOCK_ELEMS = 1 << 22


def pairwise_distances(X, Y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    n, m = X.shape[0], Y.shape[0]
    out = np.empty((n, m), dtype=np.float64)
    step = max(1, _BLOCK_ELEMS // max(1, m * X.shape[1]))
    for start in range(0, n, step):
        diff = X[start:start + step, None, :] - Y[None, :, :]
        out[start:start + step] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def knn_rows(D, k):
    """Column indices and values of the ``k`` smallest entries of each row.

    ``inf`` entries mark excluded columns and are never selected; the caller
    guarantees at least ``k`` finite entries per row.
    """
    D = np.asarray(D, dtype=np.float64)
    order = np.argsort(D, axis=1, kind="stable")[:, :k]
    return order.astype(np.int64), np.take_along_axis(D, order, axis=1)


def knn_graph(D, k):
    """Symmetrized (union) k-NN graph with ``exp(-distance)`` weights."""
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    masked = D.copy()
    np.fill_diagonal(masked, np.inf)
    idx, _ = knn_rows(masked, k)
    adj = np.zeros((n, n), dtype=bool)
    adj[np.repeat(np.arange(n), k), idx.ravel()] = True
    adj |= adj.T
    W = np.where(adj, np.exp(-D), 0.0)
    np.fill_diagonal(W, 0.0)
    return W


def neg_exp_normalize(D):
    """Row-wise ``exp(-d) / sum(exp(-d))``, shifted by the row minimum."""
    D = np.atleast_2d(np.asarray(D, dtype=np.float64))
    E = np.exp(-(D - D.min(axis=1, keepdims=True)))
    return E / E.sum(axis=1, keepdims=True)
