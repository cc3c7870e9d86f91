"""Independent reference computations used by the tests.

Nothing here calls into protofsl, so each oracle checks the package from a
different route.
"""

import math

import numpy as np


def brute_knn(query, pool, k, exclude=()):
    dists = [(math.dist(query, row), i) for i, row in enumerate(pool) if i not in set(exclude)]
    dists.sort()
    return [i for _, i in dists[:k]], [d for d, _ in dists[:k]]


def classical_gram_schmidt(A):
    A = np.asarray(A, dtype=float)
    Q = np.zeros_like(A)
    for j in range(A.shape[1]):
        v = A[:, j].copy()
        for i in range(j):
            v -= (Q[:, i] @ A[:, j]) * Q[:, i]
        Q[:, j] = v / np.linalg.norm(v)
    return Q


def modified_gram_schmidt(A):
    Q = np.array(A, dtype=float)
    for j in range(Q.shape[1]):
        Q[:, j] /= np.linalg.norm(Q[:, j])
        for k in range(j + 1, Q.shape[1]):
            Q[:, k] -= (Q[:, j] @ Q[:, k]) * Q[:, j]
    return Q


def projector(B):
    B = np.asarray(B, dtype=float)
    return B @ B.T


def projector_distance(A, B):
    return np.linalg.norm(projector(A) - projector(B)) / math.sqrt(2.0)


def mean_objective(candidate, bases):
    """Summed squared projector distance, evaluated literally from d x d projectors."""
    P = projector(candidate)
    return sum(np.linalg.norm(P - projector(B)) ** 2 / 2.0 for B in bases)


def batch_objective(candidates, bases):
    """``mean_objective`` for a stack of candidate bases (k, d, m), via projectors."""
    Pc = np.einsum("kdm,kem->kde", candidates, candidates)
    total = np.zeros(len(candidates))
    for B in bases:
        diff = Pc - projector(B)[None]
        total += np.einsum("kde,kde->k", diff, diff) / 2.0
    return total


def random_bases(rng, count, d, m):
    Q, _ = np.linalg.qr(rng.standard_normal((count, d, m)))
    return Q


def power_iterate(P, u0, steps=10_000):
    """``u0 @ P^steps`` by repeated squaring."""
    return np.asarray(u0) @ np.linalg.matrix_power(np.asarray(P), steps)


def softmax_neg(values):
    e = [math.exp(-v) for v in values]
    s = sum(e)
    return [x / s for x in e]


def splitmix64(seed, n):
    """Reference SplitMix64 sequence, one step at a time on Python ints."""
    mask = (1 << 64) - 1
    state, out = seed & mask, []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append(z ^ (z >> 31))
    return out


def random_admissible_chain(rng, n_states):
    """Random (T, A, u0) with every transient state able to reach an absorbing one.

    Each transient state gets an edge to an absorbing state or to an earlier
    transient state, so reachability holds by induction; extra random edges
    are added on top.
    """
    n_a = int(rng.integers(1, n_states))
    n_t = n_states - n_a
    W = np.zeros((n_t, n_states))
    for i in range(n_t):
        j = int(rng.integers(0, i + n_a)) if i else int(rng.integers(0, n_a))
        target = n_t + j if j < n_a else j - n_a
        W[i, target] = rng.uniform(0.1, 1.0)
    extra = rng.random((n_t, n_states)) < 0.3
    W += extra * rng.uniform(0.0, 1.0, (n_t, n_states))
    W[np.arange(n_t), np.arange(n_t)] = 0.0
    W /= W.sum(axis=1, keepdims=True)
    u0 = rng.dirichlet(np.ones(n_states))
    return W[:, :n_t], W[:, n_t:], u0


def full_transition(T, A):
    n_t, n_a = A.shape
    P = np.zeros((n_t + n_a, n_t + n_a))
    P[:n_t, :n_t] = T
    P[:n_t, n_t:] = A
    P[n_t:, n_t:] = np.eye(n_a)
    return P
