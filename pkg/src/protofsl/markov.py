"""Classification with an absorbing Markov chain on the prototype graph.

Prototypes are nodes of a symmetrized k'-NN graph with ``exp(-distance)``
edge weights. Making one group of classes absorbing and the rest transient,
the equilibrium of the chain started from a test sample's soft assignment
gives a graph-aware score for every absorbing class. Running it twice with
roles swapped yields a best base and a best novel class; plain nearest
neighbor then picks between the two.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import kernels
from .errors import DimensionMismatch, InsufficientPool, IsolatedTransient, StateUnreachable, ValidationError
from .types import PrototypeSet

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PrototypeGraph:
    weights: np.ndarray  # (n, n) symmetric, zero diagonal, 0 = no edge
    class_ids: tuple
    k_prime: int
    rule: str = "knn-union"

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def graph_from_distances(D, k_prime: int, class_ids=None, bandwidth: float = 1.0) -> PrototypeGraph:
    """k'-NN graph from a symmetric distance matrix.

    Edge ``i-j`` exists when either endpoint is among the other's ``k_prime``
    nearest nodes; its weight is ``exp(-D[i, j] / bandwidth)``.
    """
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    if D.shape != (n, n):
        raise ValidationError(f"distance matrix must be square, got {D.shape}")
    if not 1 <= k_prime < n:
        raise InsufficientPool(f"k'={k_prime} neighbors requested among {n} nodes")
    W = kernels.knn_graph(D / bandwidth, k_prime)
    W.setflags(write=False)
    ids = tuple(class_ids) if class_ids is not None else tuple(str(i) for i in range(n))
    return PrototypeGraph(W, ids, int(k_prime))


def build_graph(prototypes: PrototypeSet, k_prime: int, bandwidth: float = 1.0) -> PrototypeGraph:
    C = prototypes.matrix
    return graph_from_distances(kernels.pairwise_distances(C, C), k_prime, prototypes.class_ids, bandwidth)


def _unreachable_transients(T, A):
    """Transient states with no path to any absorbing state."""
    n_t = T.shape[0]
    reached = A.sum(axis=1) > 0
    # reverse BFS over transient->transient edges
    preds = [np.flatnonzero(T[:, j] > 0) for j in range(n_t)]
    queue = deque(np.flatnonzero(reached))
    while queue:
        j = queue.popleft()
        for i in preds[j]:
            if not reached[i]:
                reached[i] = True
                queue.append(i)
    return np.flatnonzero(~reached)


@dataclass(frozen=True, eq=False)
class AbsorbingChain:
    """Transition blocks ``T`` (transient to transient) and ``A`` (transient to absorbing).

    The absorbing block of the full transition matrix is the identity and is
    not stored. ``transient_ids`` / ``absorbing_ids`` map local positions to
    state indices of the full state vector (default: transient states first).
    ``absorption`` holds ``(I - T)^{-1} A``, computed once at construction.
    """

    T: np.ndarray
    A: np.ndarray
    transient_ids: np.ndarray = None
    absorbing_ids: np.ndarray = None
    equilibrium_tol: float = 1e-10
    warnings: tuple = ()
    absorption: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        n_a = A.shape[1]
        T = np.asarray(self.T, dtype=np.float64).reshape(A.shape[0], A.shape[0])
        n_t = T.shape[0]
        if n_a < 1:
            raise ValidationError("an absorbing chain needs at least one absorbing state")
        t_ids = np.arange(n_t) if self.transient_ids is None else np.asarray(self.transient_ids, dtype=np.int64)
        a_ids = (np.arange(n_t, n_t + n_a) if self.absorbing_ids is None
                 else np.asarray(self.absorbing_ids, dtype=np.int64))
        if t_ids.shape != (n_t,) or a_ids.shape != (n_a,):
            raise ValidationError("state index maps do not match the block shapes")
        if (T < 0).any() or (A < 0).any():
            raise ValidationError("transition probabilities must be non-negative")
        if n_t:
            row_err = np.abs(T.sum(axis=1) + A.sum(axis=1) - 1.0).max()
            if row_err > STOCHASTIC_TOL:
                raise ValidationError(f"rows of [T | A] do not sum to 1 (max error {row_err:.3e})")
            lost = _unreachable_transients(T, A)
            if lost.size:
                raise StateUnreachable(
                    f"{lost.size} transient state(s) cannot reach an absorbing state "
                    f"(e.g. state {int(t_ids[lost[0]])})"
                )
            B = scipy.linalg.solve(np.eye(n_t) - T, A)
            drift = np.abs(B.sum(axis=1) - 1.0).max()
            if not np.isfinite(B).all() or drift > self.equilibrium_tol * max(1, n_t):
                raise StateUnreachable(f"I - T is numerically singular (absorption mass error {drift:.3e})")
        else:
            B = np.zeros((0, n_a))
        for arr in (T, A, B, t_ids, a_ids):
            arr.setflags(write=False)
        for name, value in (("T", T), ("A", A), ("transient_ids", t_ids),
                            ("absorbing_ids", a_ids), ("absorption", B)):
            object.__setattr__(self, name, value)

    @property
    def n_t(self) -> int:
        return self.T.shape[0]

    @property
    def n_a(self) -> int:
        return self.A.shape[1]

    def transition_matrix(self) -> np.ndarray:
        """Full ``P`` in state order (materialized; for inspection and tests)."""
        n = self.n_t + self.n_a
        P = np.zeros((n, n))
        P[np.ix_(self.transient_ids, self.transient_ids)] = self.T
        P[np.ix_(self.transient_ids, self.absorbing_ids)] = self.A
        P[self.absorbing_ids, self.absorbing_ids] = 1.0
        return P


def build_chain(graph: PrototypeGraph, transient, absorbing, equilibrium_tol: float = 1e-10,
                isolated: str = "uniform") -> AbsorbingChain:
    """Absorbing chain on ``graph`` with the given state partition.

    Transient rows are the node's edge weights normalized over all its
    neighbors. A transient node without edges gets a uniform row over the
    absorbing states (recorded in ``warnings``) or raises
    :class:`IsolatedTransient` when ``isolated="raise"``.
    """
    t_ids = np.sort(np.asarray(list(transient), dtype=np.int64))
    a_ids = np.sort(np.asarray(list(absorbing), dtype=np.int64))
    if t_ids.size == 0 or a_ids.size == 0:
        raise ValidationError("transient and absorbing sets must both be non-empty")
    both = np.concatenate([t_ids, a_ids])
    if np.unique(both).size != both.size or both.size != graph.n or both.min() < 0 or both.max() >= graph.n:
        raise ValidationError("transient and absorbing sets must partition the graph nodes")
    W = graph.weights
    rows = W[t_ids]
    totals = rows.sum(axis=1)
    warnings = []
    isolated_rows = np.flatnonzero(totals <= 0)
    if isolated_rows.size and isolated == "raise":
        raise IsolatedTransient(f"transient node {int(t_ids[isolated_rows[0]])} has no edges")
    safe = np.where(totals > 0, totals, 1.0)
    T = rows[:, t_ids] / safe[:, None]
    A = rows[:, a_ids] / safe[:, None]
    for i in isolated_rows:
        A[i] = 1.0 / a_ids.size
        warnings.append(f"isolated transient node {int(t_ids[i])} given a uniform absorbing row")
    # renormalize to absorb round-off from the split division
    s = T.sum(axis=1) + A.sum(axis=1)
    T /= s[:, None]
    A /= s[:, None]
    return AbsorbingChain(T, A, t_ids, a_ids, equilibrium_tol, tuple(warnings))


def equilibrium(chain: AbsorbingChain, u0) -> np.ndarray:
    """Limit distribution over the absorbing states, ordered as ``chain.absorbing_ids``.

    ``u0`` is a probability vector over all states (or a batch of them as
    rows): ``u0[transient] @ (I - T)^{-1} A + u0[absorbing]``.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    single = u0.ndim == 1
    U = np.atleast_2d(u0)
    n = chain.n_t + chain.n_a
    if U.shape[1] != n:
        raise DimensionMismatch(f"initial state has {U.shape[1]} entries for {n} states")
    if (U < 0).any() or np.abs(U.sum(axis=1) - 1.0).max() > 1e-9:
        raise ValidationError("initial state must be a probability vector")
    out = U[:, chain.absorbing_ids].copy()
    if chain.n_t:
        out += U[:, chain.transient_ids] @ chain.absorption
    return out[0] if single else out


def initial_state(x_te, prototypes, mode: str = "exp", bandwidth: float = 1.0) -> np.ndarray:
    """Soft assignment of test sample(s) to prototypes from Euclidean distances.

    ``mode="exp"`` normalizes ``exp(-dist / bandwidth)``; ``mode="distance"``
    normalizes the raw distances (kept for comparison only: it favors far
    prototypes).
    """
    C = np.asarray(getattr(prototypes, "matrix", prototypes), dtype=np.float64)
    x = np.asarray(x_te, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != C.shape[1]:
        raise DimensionMismatch(f"test sample d={X.shape[1]}, prototypes d={C.shape[1]}")
    D = kernels.pairwise_distances(X, C)
    if mode == "exp":
        U = kernels.neg_exp_normalize(D / bandwidth)
    elif mode == "distance":
        totals = D.sum(axis=1, keepdims=True)
        U = np.where(totals > 0, D / np.where(totals > 0, totals, 1.0), 1.0 / C.shape[0])
    else:
        raise ValidationError(f"unknown initial-state mode {mode!r}")
    return U[0] if single else U


def nearest_prototype(X, prototypes) -> np.ndarray:
    """Row index of the nearest prototype for each row of ``X`` (ties to lower index)."""
    C = np.asarray(getattr(prototypes, "matrix", prototypes), dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != C.shape[1]:
        raise DimensionMismatch(f"test sample d={X.shape[1]}, prototypes d={C.shape[1]}")
    return kernels.knn_rows(kernels.pairwise_distances(X, C), 1)[0][:, 0]


def classify_nn(x_te, prototypes: PrototypeSet):
    """Class id of the Euclidean-nearest prototype (a list for a batch)."""
    x = np.asarray(x_te, dtype=np.float64)
    idx = nearest_prototype(x, prototypes)
    labels = [prototypes.class_ids[i] for i in idx]
    return labels[0] if x.ndim == 1 else labels


@dataclass(frozen=True, eq=False)
class TwoPassResult:
    labels: list
    base_winner: np.ndarray  # node indices
    novel_winner: np.ndarray
    u_base: np.ndarray  # equilibrium over base nodes, one row per sample
    u_novel: np.ndarray


class TwoPassClassifier:
    """Graph and both absorbing chains for one prototype set, reused across test samples.

    Pass 1 makes novel classes transient and base classes absorbing to pick a
    base winner; pass 2 swaps the roles to pick a novel winner. The sample
    goes to whichever winner's prototype is nearer, the base winner on ties.
    """

    def __init__(self, prototypes: PrototypeSet, base_ids, novel_ids, k_prime: int,
                 bandwidth: float = 1.0, u0_mode: str = "exp", equilibrium_tol: float = 1e-10):
        base_ids, novel_ids = list(base_ids), list(novel_ids)
        if not base_ids or not novel_ids:
            raise ValidationError("both base and novel class sets must be non-empty")
        self.prototypes = prototypes
        self.bandwidth = bandwidth
        self.u0_mode = u0_mode
        base_nodes = [prototypes.index_of(c) for c in base_ids]
        novel_nodes = [prototypes.index_of(c) for c in novel_ids]
        self.graph = build_graph(prototypes, k_prime, bandwidth)
        try:
            self.base_chain = build_chain(self.graph, novel_nodes, base_nodes, equilibrium_tol)
        except StateUnreachable as exc:
            exc.pass_number = 1
            raise
        try:
            self.novel_chain = build_chain(self.graph, base_nodes, novel_nodes, equilibrium_tol)
        except StateUnreachable as exc:
            exc.pass_number = 2
            raise

    @property
    def warnings(self):
        return self.base_chain.warnings + self.novel_chain.warnings

    def predict(self, X) -> TwoPassResult:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        C = self.prototypes.matrix
        U0 = initial_state(X, C, self.u0_mode, self.bandwidth)
        u_base = equilibrium(self.base_chain, U0)
        u_novel = equilibrium(self.novel_chain, U0)
        bw = self.base_chain.absorbing_ids[np.argmax(u_base, axis=1)]
        nw = self.novel_chain.absorbing_ids[np.argmax(u_novel, axis=1)]
        rows = np.arange(X.shape[0])
        D = kernels.pairwise_distances(X, C)
        pick = np.where(D[rows, nw] < D[rows, bw], nw, bw)
        labels = [self.prototypes.class_ids[i] for i in pick]
        return TwoPassResult(labels, bw, nw, u_base, u_novel)


def classify_two_pass(x_te, prototypes: PrototypeSet, base_ids, novel_ids, k_prime: int, **kwargs):
    """Two-pass absorbing-chain prediction for one sample.

    Returns ``(class_id, diagnostics)`` where diagnostics carries both pass
    winners and their equilibrium vectors. For many samples build a
    :class:`TwoPassClassifier` once and call ``predict``.
    """
    clf = TwoPassClassifier(prototypes, base_ids, novel_ids, k_prime, **kwargs)
    res = clf.predict(np.asarray(x_te, dtype=np.float64)[None, :])
    diag = {
        "base_winner": prototypes.class_ids[res.base_winner[0]],
        "novel_winner": prototypes.class_ids[res.novel_winner[0]],
        "u_base": res.u_base[0],
        "u_novel": res.u_novel[0],
        "warnings": clf.warnings,
    }
    return res.labels[0], diag
