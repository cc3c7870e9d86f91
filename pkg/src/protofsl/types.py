"""Shared data model: feature matrices, prototype sets, hyperparameters, splits."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .errors import EmptyClass, SplitError, ValidationError

ORIGINS = ("given-base", "estimated-novel", "oracle-novel", "sample-mean")


def _frozen_array(data, ndim):
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValidationError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Labeled sample features, one row per sample."""

    data: np.ndarray
    labels: tuple
    row_ids: tuple = ()

    def __post_init__(self):
        data = _frozen_array(self.data, 2)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        ids = tuple(str(x) for x in self.row_ids) or tuple(str(i) for i in range(data.shape[0]))
        object.__setattr__(self, "row_ids", ids)
        n, d = data.shape
        if n < 1 or d < 1:
            raise ValidationError(f"feature matrix must be non-empty, got shape {data.shape}")
        if len(self.labels) != n or len(ids) != n:
            raise ValidationError(
                f"{n} rows but {len(self.labels)} labels and {len(ids)} row ids"
            )
        if not np.all(np.isfinite(data)):
            raise ValidationError("feature matrix contains non-finite entries")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def classes(self) -> list[str]:
        """Distinct labels in order of first appearance."""
        return list(dict.fromkeys(self.labels))

    def rows_of(self, label: str) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.labels, dtype=object) == label)

    def subset(self, rows) -> FeatureMatrix:
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureMatrix(
            self.data[rows],
            tuple(self.labels[i] for i in rows),
            tuple(self.row_ids[i] for i in rows),
        )


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    """One prototype vector per class.

    Class ids are opaque strings; row ``i`` of ``matrix`` belongs to
    ``class_ids[i]`` and ``index_of`` maps back.
    """

    matrix: np.ndarray
    class_ids: tuple
    origin: tuple = ()

    def __post_init__(self):
        matrix = _frozen_array(self.matrix, 2)
        object.__setattr__(self, "matrix", matrix)
        ids = tuple(str(c) for c in self.class_ids)
        object.__setattr__(self, "class_ids", ids)
        origin = tuple(self.origin) or ("given-base",) * len(ids)
        object.__setattr__(self, "origin", origin)
        if matrix.shape[0] != len(ids) or len(origin) != len(ids):
            raise ValidationError(
                f"{matrix.shape[0]} prototype rows, {len(ids)} class ids, {len(origin)} origin tags"
            )
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate class ids in prototype set")
        bad = set(origin) - set(ORIGINS)
        if bad:
            raise ValidationError(f"unknown origin tags {sorted(bad)}")
        if not np.all(np.isfinite(matrix)):
            raise ValidationError("prototype matrix contains non-finite entries")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(ids)})

    def __len__(self) -> int:
        return len(self.class_ids)

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def index_of(self, class_id: str) -> int:
        return self._index[class_id]

    def __getitem__(self, class_id: str) -> np.ndarray:
        return self.matrix[self._index[class_id]]

    def select(self, class_ids: Sequence[str]) -> PrototypeSet:
        rows = [self._index[c] for c in class_ids]
        return PrototypeSet(self.matrix[rows], [self.class_ids[i] for i in rows],
                            [self.origin[i] for i in rows])

    def concat(self, other: PrototypeSet) -> PrototypeSet:
        return PrototypeSet(
            np.vstack([self.matrix, other.matrix]),
            self.class_ids + other.class_ids,
            self.origin + other.origin,
        )


@dataclass(frozen=True)
class HyperParams:
    """Parameters of the two-step procedure.

    ``bandwidth`` scales the distance inside every ``exp(-d / bandwidth)``
    weighting; 1.0 is the plain ``exp(-d)`` rule. ``u0_mode`` selects how the
    initial Markov state is built from test-to-prototype distances
    (``"exp"`` or ``"distance"``, the latter normalizing raw distances).
    """

    r: int = 20
    q: int = 20
    k_prime: int = 3
    alpha1: float = 0.9
    alpha2: float = 0.7
    rank_tol: float = 1e-8
    equilibrium_tol: float = 1e-10
    bandwidth: float = 1.0
    u0_mode: str = "exp"

    def __post_init__(self):
        for name in ("r", "q", "k_prime"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in ("alpha1", "alpha2"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")
            object.__setattr__(self, name, value)
        for name in ("rank_tol", "equilibrium_tol", "bandwidth"):
            if not float(getattr(self, name)) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.u0_mode not in ("exp", "distance"):
            raise ValidationError(f"u0_mode must be 'exp' or 'distance', got {self.u0_mode!r}")

    def replace(self, **changes) -> HyperParams:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


PROFILES = {
    "imagenet": HyperParams(r=20, q=20, k_prime=3, alpha1=0.9, alpha2=0.7),
    "cub": HyperParams(r=20, q=20, k_prime=5, alpha1=0.5, alpha2=0.5),
    # tuned for the default synthetic dataset (d=32, latent_dim=4)
    "synthetic": HyperParams(r=5, q=4, k_prime=3, alpha1=0.5, alpha2=0.8),
}


@dataclass(frozen=True)
class DatasetSplit:
    base_classes: tuple
    novel_classes: tuple
    shots: int = 1

    def __post_init__(self):
        base = tuple(str(c) for c in self.base_classes)
        novel = tuple(str(c) for c in self.novel_classes)
        object.__setattr__(self, "base_classes", base)
        object.__setattr__(self, "novel_classes", novel)
        if not base or not novel:
            raise SplitError("base and novel class lists must both be non-empty")
        if len(set(base)) != len(base) or len(set(novel)) != len(novel):
            raise SplitError("duplicate class ids within a class list")
        overlap = set(base) & set(novel)
        if overlap:
            raise SplitError(f"classes listed as both base and novel: {sorted(overlap)[:5]}")
        if isinstance(self.shots, bool) or int(self.shots) != self.shots or self.shots < 1:
            raise SplitError(f"shots must be a positive integer, got {self.shots!r}")
        object.__setattr__(self, "shots", int(self.shots))


@dataclass(frozen=True)
class Issue:
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple = field(default_factory=tuple)

    def __bool__(self):
        # truthy when the episode is runnable
        return not self.issues

    @property
    def ok(self) -> bool:
        return not self.issues

    def codes(self) -> list[str]:
        return [i.code for i in self.issues]

    def __str__(self):
        return "ok" if self.ok else "; ".join(i.message for i in self.issues)


def validate_episode(base, novel_samples, hp: HyperParams) -> ValidationReport:
    """List every reason the episode cannot run; an empty report means it can.

    Accepts raw arrays as well as :class:`PrototypeSet` / :class:`FeatureMatrix`
    so that non-finite inputs can be reported instead of raising.
    """
    issues = []
    B = np.asarray(getattr(base, "matrix", base), dtype=np.float64)
    X = np.asarray(getattr(novel_samples, "data", novel_samples), dtype=np.float64)
    if B.ndim != 2 or X.ndim != 2:
        issues.append(Issue("shape", "base and novel samples must be 2-d matrices"))
        return ValidationReport(tuple(issues))
    n_b, d = B.shape
    if X.shape[1] != d:
        issues.append(Issue("dimension-mismatch",
                            f"dimension mismatch: base prototypes have d={d}, novel samples d={X.shape[1]}"))
    if not np.all(np.isfinite(B)):
        issues.append(Issue("non-finite", "base prototypes contain non-finite entries"))
    if not np.all(np.isfinite(X)):
        issues.append(Issue("non-finite", "novel samples contain non-finite entries"))
    ids = getattr(base, "class_ids", None)
    if ids is not None and len(set(ids)) != len(ids):
        issues.append(Issue("duplicate-class-id", "duplicate class ids in base prototypes"))
    if hp.r > n_b:
        issues.append(Issue("r-exceeds-nb", f"r exceeds n_b ({hp.r} > {n_b})"))
    if hp.q > n_b - 1:
        issues.append(Issue("q-exceeds-nb", f"q exceeds n_b - 1 ({hp.q} > {n_b - 1})"))
    if hp.q + 1 > d:
        issues.append(Issue("subspace-exceeds-d", f"subspace dimension q+1={hp.q + 1} exceeds d={d}"))
    return ValidationReport(tuple(issues))


def mean_shot(samples) -> np.ndarray:
    """Arithmetic mean of the rows of one class's samples."""
    data = getattr(samples, "data", samples)
    labels = getattr(samples, "labels", None)
    if labels is not None and len(set(labels)) > 1:
        raise ValidationError("mean_shot expects samples of a single class")
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if X.shape[0] == 0 or X.size == 0:
        raise EmptyClass("cannot take the mean of zero samples")
    return X.mean(axis=0)


def class_means(samples: FeatureMatrix, origin: str = "sample-mean") -> PrototypeSet:
    """Per-class sample means, classes in order of first appearance."""
    classes = samples.classes()
    rows = [mean_shot(samples.data[samples.rows_of(c)]) for c in classes]
    return PrototypeSet(np.vstack(rows), classes, (origin,) * len(classes))
