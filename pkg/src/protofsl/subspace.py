"""Novel-class prototype estimation from local subspaces of base prototypes.

For a novel sample ``x_n`` the ``r`` nearest base prototypes each span, together
with their own ``q`` nearest base prototypes, a ``(q+1)``-dimensional linear
subspace. The extrinsic (projector) mean of those subspaces is the local
linearization of the prototype manifold; ``x_n`` is projected onto it and
blended with ``x_n`` itself and a distance-weighted average of the neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateMean, DimensionMismatch, InsufficientPool, RankDeficient, ValidationError
from .types import HyperParams, PrototypeSet, validate_episode

ORTHONORMAL_TOL = 1e-10


def _pool_matrix(pool):
    return np.asarray(getattr(pool, "matrix", pool), dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Subspace:
    """A point on the Grassmannian, stored as a ``d x m`` orthonormal basis."""

    basis: np.ndarray

    def __post_init__(self):
        B = np.array(self.basis, dtype=np.float64)
        if B.ndim == 1:
            B = B[:, None]
        if B.ndim != 2 or not 1 <= B.shape[1] <= B.shape[0]:
            raise ValidationError(f"basis must be d x m with 1 <= m <= d, got shape {B.shape}")
        gram_err = np.abs(B.T @ B - np.eye(B.shape[1])).max()
        if gram_err > ORTHONORMAL_TOL:
            raise ValidationError(f"basis columns are not orthonormal (max error {gram_err:.3e})")
        B.setflags(write=False)
        object.__setattr__(self, "basis", B)

    @classmethod
    def from_span(cls, columns, rank_tol: float = 1e-8) -> Subspace:
        """Orthonormal basis for the column span of ``columns`` (must have full column rank)."""
        A = np.atleast_2d(np.asarray(columns, dtype=np.float64))
        if A.shape[0] < A.shape[1]:
            raise RankDeficient(f"{A.shape[1]} columns cannot be independent in R^{A.shape[0]}",
                                rank=A.shape[0])
        U, s, _ = np.linalg.svd(A, full_matrices=False)
        rank = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
        if rank < A.shape[1]:
            raise RankDeficient(f"column set has numerical rank {rank} < {A.shape[1]}", rank=rank)
        return cls(U)

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    @property
    def m(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T


@dataclass(frozen=True, eq=False)
class NeighborContext:
    neighbor_indices: np.ndarray  # (r,) base rows nearest to the novel sample
    neighbor_of_neighbor_indices: np.ndarray  # (r, q)
    distances: np.ndarray  # (r,) ascending


@dataclass(frozen=True, eq=False)
class Estimate:
    """Estimated prototype plus the intermediates it was built from."""

    prototype: np.ndarray
    c_p: np.ndarray
    c_d: np.ndarray
    neighbors: NeighborContext
    mean_subspace: Subspace
    q_used: int


def knn(query, pool, k: int, exclude=None):
    """Indices and Euclidean distances of the ``k`` pool rows nearest ``query``.

    Sorted by ascending distance, ties broken by lower index. Rows listed in
    ``exclude`` are never returned.
    """
    P = _pool_matrix(pool)
    x = np.asarray(query, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != P.shape[1]:
        raise DimensionMismatch(f"query has d={x.shape[1]}, pool has d={P.shape[1]}")
    D = kernels.pairwise_distances(x, P)
    excluded = set() if exclude is None else {int(i) for i in exclude}
    if excluded:
        D[0, sorted(excluded)] = np.inf
    available = P.shape[0] - len(excluded & set(range(P.shape[0])))
    if not 1 <= k <= available:
        raise InsufficientPool(f"requested k={k} neighbors from a pool of {available}")
    idx, dist = kernels.knn_rows(D, k)
    return idx[0], dist[0]


def base_neighbor_table(base, q: int) -> np.ndarray:
    """``(n_b, q)`` table of each base prototype's ``q`` nearest other base prototypes."""
    C = _pool_matrix(base)
    if not 1 <= q <= C.shape[0] - 1:
        raise InsufficientPool(f"q={q} neighbors requested among {C.shape[0] - 1} other prototypes")
    D = kernels.pairwise_distances(C, C)
    np.fill_diagonal(D, np.inf)
    return kernels.knn_rows(D, q)[0]


def build_local_subspace(center_idx: int, base, q: int, rank_tol: float = 1e-8,
                         neighbor_idx=None) -> Subspace:
    """Span of base prototype ``center_idx`` and its ``q`` nearest base prototypes.

    Raises :class:`RankDeficient` when those ``q+1`` vectors are not linearly
    independent at relative tolerance ``rank_tol``.
    """
    C = _pool_matrix(base)
    if q + 1 > C.shape[1]:
        raise RankDeficient(f"subspace dimension {q + 1} exceeds ambient dimension {C.shape[1]}",
                            rank=C.shape[1])
    if neighbor_idx is None:
        neighbor_idx, _ = knn(C[center_idx], C, q, exclude=[center_idx])
    cols = C[np.concatenate([[center_idx], np.asarray(neighbor_idx, dtype=np.int64)])].T
    return Subspace.from_span(cols, rank_tol)


def grassmann_distance(a: Subspace, b: Subspace) -> float:
    """Projector distance ``||P_a - P_b||_F / sqrt(2)``.

    Evaluated as ``||(I - P_a) B||_F``, which equals the projector form for
    equal-dimensional subspaces and keeps full relative accuracy near zero.
    """
    if a.d != b.d or a.m != b.m:
        raise DimensionMismatch(f"subspaces of shape {a.basis.shape} and {b.basis.shape}")
    A, B = a.basis, b.basis
    return float(np.linalg.norm(B - A @ (A.T @ B)))


def _top_eigen(subspaces):
    """Eigenvalues (descending) and eigenvectors of ``M = sum_i B_i B_i^T``.

    Uses the ``d x d`` matrix directly when it is the smaller problem, else the
    Gram matrix of the stacked bases, whose non-zero spectrum is the same.
    """
    Y = np.hstack([s.basis for s in subspaces])
    d, k = Y.shape
    if d <= k:
        M = Y @ Y.T
        M = 0.5 * (M + M.T)
        w, V = np.linalg.eigh(M)
        return w[::-1], V[:, ::-1]
    G = Y.T @ Y
    G = 0.5 * (G + G.T)
    w, V = np.linalg.eigh(G)
    w, V = w[::-1], V[:, ::-1]
    pos = w > 0
    U = np.zeros((d, k))
    U[:, pos] = (Y @ V[:, pos]) / np.sqrt(w[pos])
    return np.concatenate([w, [0.0]]), U


def extrinsic_mean(subspaces, m: int | None = None, rank_tol: float = 1e-8) -> Subspace:
    """Subspace minimizing the summed squared projector distance to ``subspaces``.

    The minimizer is spanned by the top-``m`` eigenvectors of ``sum_i P_i``.
    Raises :class:`DegenerateMean` when eigenvalues ``m`` and ``m+1`` tie
    (relative to the largest eigenvalue), since the minimizer is then not unique.
    """
    subspaces = list(subspaces)
    if not subspaces:
        raise ValidationError("extrinsic mean of an empty set")
    m = subspaces[0].m if m is None else int(m)
    d = subspaces[0].d
    for s in subspaces:
        if s.d != d or s.m != subspaces[0].m:
            raise DimensionMismatch("all subspaces must share ambient and subspace dimension")
    if not 1 <= m <= d:
        raise ValidationError(f"mean dimension m={m} outside [1, {d}]")
    w, V = _top_eigen(subspaces)
    if m < len(w) and w[m - 1] - w[m] <= rank_tol * max(1.0, w[0]):
        raise DegenerateMean(
            f"eigenvalues {m} and {m + 1} of the projector sum coincide "
            f"({w[m - 1]:.6g} vs {w[m]:.6g}); the mean is not unique"
        )
    Q, _ = np.linalg.qr(V[:, :m])
    return Subspace(Q)


def project_onto(sub: Subspace, x) -> np.ndarray:
    """Orthogonal projection of ``x`` (a vector or rows of a matrix) onto ``sub``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != sub.d:
        raise DimensionMismatch(f"vector has d={x.shape[-1]}, subspace ambient d={sub.d}")
    B = sub.basis
    return (x @ B) @ B.T


def direct_contribution(x, neighbors: NeighborContext, base, bandwidth: float = 1.0) -> np.ndarray:
    """Average of the neighbor prototypes weighted by normalized ``exp(-dist / bandwidth)``."""
    C = _pool_matrix(base)
    p = kernels.neg_exp_normalize(np.asarray(neighbors.distances, dtype=np.float64)[None, :] / bandwidth)[0]
    return p @ C[neighbors.neighbor_indices]


def combine(x_n, c_p, c_d, alpha1: float, alpha2: float) -> np.ndarray:
    """``alpha2 * (alpha1 * x_n + (1 - alpha1) * c_p) + (1 - alpha2) * c_d``."""
    x_n, c_p, c_d = (np.asarray(v, dtype=np.float64) for v in (x_n, c_p, c_d))
    # IEEE arithmetic keeps the alpha in {0, 1} boundary cases exact
    return alpha2 * (alpha1 * x_n + (1.0 - alpha1) * c_p) + (1.0 - alpha2) * c_d


def estimate_prototype(x_n, base, hp: HyperParams, class_id=None, neighbor_table=None) -> Estimate:
    """Estimate one novel-class prototype from its (mean) shot ``x_n``.

    ``neighbor_table`` is an optional precomputed :func:`base_neighbor_table`
    with at least ``hp.q`` columns; pass it when estimating many classes
    against the same base set.
    """
    C = _pool_matrix(base)
    x_n = np.asarray(x_n, dtype=np.float64)
    idx, dist = knn(x_n, C, hp.r)
    if neighbor_table is None:
        neighbor_table = base_neighbor_table(C, hp.q)
    nn = np.asarray(neighbor_table)[idx, :hp.q]
    try:
        subs = [build_local_subspace(int(i), C, hp.q, hp.rank_tol, neighbor_idx=nn[k])
                for k, i in enumerate(idx)]
        mean = extrinsic_mean(subs, hp.q + 1, hp.rank_tol)
    except (RankDeficient, DegenerateMean) as exc:
        exc.class_id = class_id
        if class_id is not None:
            exc.args = (f"class {class_id}: {exc.args[0]}",)
        raise
    ctx = NeighborContext(idx, nn, dist)
    c_p = project_onto(mean, x_n)
    c_d = direct_contribution(x_n, ctx, C, hp.bandwidth)
    c_n = combine(x_n, c_p, c_d, hp.alpha1, hp.alpha2)
    return Estimate(c_n, c_p, c_d, ctx, mean, hp.q)


def estimate_prototypes(shot_means: PrototypeSet, base: PrototypeSet, hp: HyperParams):
    """Estimate every novel prototype in ``shot_means``.

    Returns the estimated :class:`PrototypeSet` (origin ``estimated-novel``)
    and the per-class :class:`Estimate` list in the same order. Classes are
    processed independently, so the result does not depend on their order.
    """
    report = validate_episode(base, shot_means.matrix, hp)
    if not report.ok:
        raise ValidationError(str(report))
    table = base_neighbor_table(base.matrix, hp.q)
    estimates = [estimate_prototype(shot_means.matrix[i], base, hp, class_id=c, neighbor_table=table)
                 for i, c in enumerate(shot_means.class_ids)]
    matrix = np.vstack([e.prototype for e in estimates])
    protos = PrototypeSet(matrix, shot_means.class_ids, ("estimated-novel",) * len(estimates))
    return protos, estimates
