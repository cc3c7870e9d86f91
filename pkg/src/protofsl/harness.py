"""Evaluation protocol: episodes, model variants, class-wise accuracy, sweeps.

Every trial draws its few-shot samples from a PRNG substream keyed by
(master seed, trial index, class position), so trials can run in any order
or in parallel, and different sweep values reuse the same draws.
"""

from __future__ import annotations

import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import __version__, prng
from .dataio import Dataset
from .errors import (DegenerateMean, EmptyClass, InsufficientShots, NumericalError, ProtoFSLError,
                     RankDeficient, ValidationError)
from .markov import TwoPassClassifier, classify_nn
from .subspace import estimate_prototypes
from .types import DatasetSplit, FeatureMatrix, HyperParams, PrototypeSet, class_means

log = logging.getLogger(__name__)

KEY_TRIALS = 100
KEY_CLASS_ORDER = 101
MAX_Q_RETRIES = 2


class Variant(str, Enum):
    NA = "NA"
    M1 = "M1"
    M2 = "M2"
    M1_M2 = "M1_M2"
    ORACLE = "ORACLE"

    @classmethod
    def parse(cls, name: str) -> Variant:
        key = name.strip().upper().replace("+", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown variant {name!r}; expected one of "
                                  f"{', '.join(v.value for v in cls)}") from None


ALL_VARIANTS = tuple(Variant)


class TrialFailed(ProtoFSLError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True, eq=False)
class Episode:
    base: PrototypeSet
    shots: FeatureMatrix
    test: FeatureMatrix
    oracle: PrototypeSet | None
    shot_rows: dict  # novel class -> drawn row indices into dataset.train
    trial_seed: int

    @property
    def shot_means(self) -> PrototypeSet:
        return class_means(self.shots)

    @property
    def novel_ids(self) -> tuple:
        return tuple(self.shots.classes())


def trial_seed(master_seed: int, trial: int) -> int:
    return prng.substream(master_seed, KEY_TRIALS, trial)


def draw_shots(pool_size: int, shots: int, seed: int, class_key: int) -> np.ndarray:
    """Positions (within a class's training pool) of the drawn shots, without replacement."""
    if shots > pool_size:
        raise InsufficientShots(f"{shots} shots requested from a pool of {pool_size}")
    return prng.permutation(prng.substream(seed, class_key), pool_size)[:shots]


def sample_episode(dataset: Dataset, split: DatasetSplit, shots: int, seed: int,
                   max_test_per_class: int | None = None) -> Episode:
    """One evaluation instance.

    Shots of each novel class are drawn from its training pool with a stream
    keyed by the class's position in ``dataset.train`` (not by the split),
    so draws stay paired across splits and shot counts. The test set holds
    the held-out samples of every base and novel class in the split,
    optionally capped at the first ``max_test_per_class`` per class.
    """
    class_keys = {c: i for i, c in enumerate(dataset.train.classes())}
    shot_rows, chosen = {}, []
    for c in split.novel_classes:
        if c not in class_keys:
            raise InsufficientShots(f"novel class {c} has no training samples")
        pool = dataset.train.rows_of(c)
        rows = pool[draw_shots(pool.size, shots, seed, class_keys[c])]
        shot_rows[c] = rows
        chosen.extend(rows.tolist())
    wanted = set(split.base_classes) | set(split.novel_classes)
    test_rows, seen = [], {}
    for i, c in enumerate(dataset.test.labels):
        if c in wanted and (max_test_per_class is None or seen.get(c, 0) < max_test_per_class):
            seen[c] = seen.get(c, 0) + 1
            test_rows.append(i)
    known = set(dataset.prototypes.class_ids)
    oracle = None
    if all(c in known for c in split.novel_classes):
        oracle = dataset.with_split(split).oracle_novel
    return Episode(dataset.with_split(split).base, dataset.train.subset(chosen),
                   dataset.test.subset(test_rows), oracle, shot_rows, seed)


def estimate_with_retry(shot_means: PrototypeSet, base: PrototypeSet, hp: HyperParams):
    """Estimate novel prototypes, lowering ``q`` by one (at most twice) on rank deficiency."""
    attempts = []
    for q in range(hp.q, max(hp.q - MAX_Q_RETRIES, 1) - 1, -1):
        try:
            protos, estimates = estimate_prototypes(shot_means, base, hp.replace(q=q))
            return protos, estimates, attempts
        except RankDeficient as exc:
            attempts.append({"q": q, "class_id": exc.class_id, "rank": exc.rank, "error": str(exc)})
            log.info("rank deficient at q=%d (%s); retrying", q, exc)
        except DegenerateMean as exc:
            raise TrialFailed(f"degenerate subspace mean: {exc}", {"attempts": attempts}) from exc
    raise TrialFailed(f"rank deficient after {len(attempts)} attempts: {attempts[-1]['error']}",
                      {"attempts": attempts})


def _two_pass(prototypes, episode, hp):
    clf = TwoPassClassifier(prototypes, episode.base.class_ids, episode.novel_ids, hp.k_prime,
                            bandwidth=hp.bandwidth, u0_mode=hp.u0_mode, equilibrium_tol=hp.equilibrium_tol)
    return clf.predict(episode.test.data).labels


def run_variants(variants, episode: Episode, hp: HyperParams) -> dict:
    """Predictions over ``episode.test`` for each variant.

    Returns ``{variant: list of class ids}``; a variant that fails maps to a
    :class:`TrialFailed` instance instead. The prototype estimate is shared
    by M1 and M1_M2.
    """
    variants = [Variant.parse(v) if isinstance(v, str) else v for v in variants]
    means = episode.shot_means
    X = episode.test.data
    out, estimated = {}, None
    for v in variants:
        try:
            if v in (Variant.M1, Variant.M1_M2) and estimated is None:
                try:
                    estimated = estimate_with_retry(means, episode.base, hp)[0]
                except ValidationError as exc:
                    raise TrialFailed(f"invalid episode: {exc}") from exc
            if v is Variant.NA:
                out[v] = classify_nn(X, episode.base.concat(means))
            elif v is Variant.M1:
                out[v] = classify_nn(X, episode.base.concat(estimated))
            elif v is Variant.M2:
                out[v] = _two_pass(episode.base.concat(means), episode, hp)
            elif v is Variant.M1_M2:
                out[v] = _two_pass(episode.base.concat(estimated), episode, hp)
            elif v is Variant.ORACLE:
                if episode.oracle is None:
                    raise TrialFailed("dataset has no true novel-class prototypes")
                out[v] = classify_nn(X, episode.base.concat(episode.oracle))
        except TrialFailed as exc:
            out[v] = exc
        except (NumericalError, ValidationError) as exc:
            out[v] = TrialFailed(f"{type(exc).__name__}: {exc}")
    return out


def run_variant(variant, episode: Episode, hp: HyperParams) -> list:
    """Predictions of a single variant; raises :class:`TrialFailed` on failure."""
    v = Variant.parse(variant) if isinstance(variant, str) else variant
    res = run_variants([v], episode, hp)[v]
    if isinstance(res, TrialFailed):
        raise res
    return res


def classwise_accuracy(predictions, truth, classes=None) -> float:
    """Mean over classes of per-class accuracy, in percent."""
    pred = np.asarray(list(predictions), dtype=object)
    true = np.asarray(list(truth), dtype=object)
    if pred.shape != true.shape:
        raise ValidationError(f"{pred.size} predictions for {true.size} labels")
    if true.size == 0:
        raise EmptyClass("no test samples")
    classes = list(dict.fromkeys(true.tolist())) if classes is None else list(classes)
    per_class = []
    for c in classes:
        mask = true == c
        if not mask.any():
            raise EmptyClass(f"class {c} has no test samples")
        per_class.append(np.mean(pred[mask] == c))
    return 100.0 * float(np.mean(per_class))


def aggregate(values) -> tuple[float, float]:
    """Mean and standard error (sample std with n-1 over sqrt(n)); SE is 0 for one value."""
    values = [float(v) for v in values]
    if not values:
        raise ValidationError("cannot aggregate zero trials")
    mean = statistics.fmean(values)
    if len(values) == 1:
        return mean, 0.0
    return mean, statistics.stdev(values) / math.sqrt(len(values))


@dataclass
class Cell:
    """One configuration of a run: a split, a shot count and hyperparameters."""

    config: str
    split: DatasetSplit
    shots: int
    hp: HyperParams


@dataclass
class EvalReport:
    rows: list
    provenance: dict
    failures: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"rows": self.rows, "provenance": self.provenance, "failures": self.failures}


def _run_trial(dataset, cell, variants, master_seed, t, max_test_per_class):
    seed = trial_seed(master_seed, t)
    try:
        ep = sample_episode(dataset, cell.split, cell.shots, seed, max_test_per_class)
    except ProtoFSLError as exc:
        return {v: TrialFailed(f"episode: {exc}") for v in variants}
    preds = run_variants(variants, ep, cell.hp)
    truth = ep.test.labels
    return {v: p if isinstance(p, TrialFailed) else classwise_accuracy(p, truth) for v, p in preds.items()}


def evaluate_cells(dataset: Dataset, cells, variants=ALL_VARIANTS, trials: int = 10, master_seed: int = 0,
                   threads: int = 1, max_test_per_class: int | None = None, extra_provenance=None) -> EvalReport:
    """Run every cell for ``trials`` trials and aggregate per (cell, variant).

    ``threads`` only changes scheduling: trial ``t`` of every cell uses the
    same seed and aggregation is ordered by trial index.
    """
    variants = [Variant.parse(v) if isinstance(v, str) else v for v in variants]
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    jobs = [(ci, t) for ci in range(len(cells)) for t in range(trials)]

    def work(job):
        ci, t = job
        return _run_trial(dataset, cells[ci], variants, master_seed, t, max_test_per_class)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    by_job = dict(zip(jobs, results))

    rows, failures = [], []
    for ci, cell in enumerate(cells):
        for v in variants:
            accs = []
            for t in range(trials):
                r = by_job[(ci, t)][v]
                if isinstance(r, TrialFailed):
                    failures.append({"variant": v.value, "config": cell.config, "shot": cell.shots,
                                     "trial": t, "error": str(r), "diagnostics": r.diagnostics})
                else:
                    accs.append(r)
            mean, se = aggregate(accs) if accs else (float("nan"), float("nan"))
            rows.append({"variant": v.value, "config": cell.config, "shot": cell.shots,
                         "trial_count": len(accs), "mean_accuracy": mean, "std_error": se,
                         "trial_accuracies": accs})
    provenance = {
        "version": __version__,
        "master_seed": int(master_seed),
        "trials": trials,
        "dataset": dataset.name,
        "dataset_identity": dataset.identity(),
        "max_test_per_class": max_test_per_class,
        "hyperparams": {c.config: c.hp.to_dict() for c in cells},
        **(extra_provenance or {}),
    }
    return EvalReport(rows, provenance, failures)


def evaluate(dataset: Dataset, hp: HyperParams, shots=(1,), variants=ALL_VARIANTS, trials: int = 10,
             master_seed: int = 0, threads: int = 1, max_test_per_class: int | None = None) -> EvalReport:
    """Shot sweep on the dataset's own split (one cell per shot count)."""
    cells = [Cell(f"shots={k}", dataset.split, int(k), hp) for k in shots]
    return evaluate_cells(dataset, cells, variants, trials, master_seed, threads, max_test_per_class)


SWEEP_AXES = ("shots", "base_ratio", "total_classes", "r", "alpha1", "alpha2")


def _class_order(split: DatasetSplit, master_seed: int) -> list:
    classes = list(split.base_classes) + list(split.novel_classes)
    perm = prng.permutation(prng.substream(master_seed, KEY_CLASS_ORDER), len(classes))
    return [classes[i] for i in perm]


def sweep_cells(axis: str, values, dataset: Dataset, hp: HyperParams, shots: int = 1,
                master_seed: int = 0) -> list:
    """Cells for a one-axis sweep around the fixed ``hp`` / ``shots`` / split.

    ``alpha1`` sweeps hold ``alpha2 = 1`` and ``alpha2`` sweeps hold
    ``alpha1 = 1``. ``base_ratio`` keeps the total class count and reassigns
    classes; ``total_classes`` keeps the dataset's base fraction. Both take
    classes from one seeded ordering so neighboring values overlap.
    """
    if axis not in SWEEP_AXES:
        raise ValidationError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")
    values = list(values)
    if not values:
        raise ValidationError("sweep needs at least one value")
    split = dataset.split
    cells = []
    for value in values:
        label = f"{axis}={value}"
        if axis == "shots":
            cells.append(Cell(label, split, int(value), hp))
        elif axis == "r":
            cells.append(Cell(label, split, shots, hp.replace(r=int(value))))
        elif axis == "alpha1":
            cells.append(Cell(label, split, shots, hp.replace(alpha1=float(value), alpha2=1.0)))
        elif axis == "alpha2":
            cells.append(Cell(label, split, shots, hp.replace(alpha1=1.0, alpha2=float(value))))
        else:
            order = _class_order(split, master_seed)
            n_all = len(split.base_classes) + len(split.novel_classes)
            if axis == "base_ratio":
                ratio, total = float(value), n_all
            else:
                ratio, total = len(split.base_classes) / n_all, int(value)
            if not 0 < ratio < 1 or not 2 <= total <= n_all:
                raise ValidationError(f"{label} is outside the dataset's {n_all} classes")
            n_base = min(max(1, round(ratio * total)), total - 1)
            cells.append(Cell(label, DatasetSplit(order[:n_base], order[n_base:total], shots), shots, hp))
    return cells


def sweep(axis: str, values, dataset: Dataset, hp: HyperParams, shots: int = 1, variants=ALL_VARIANTS,
          trials: int = 10, master_seed: int = 0, threads: int = 1,
          max_test_per_class: int | None = None) -> EvalReport:
    cells = sweep_cells(axis, values, dataset, hp, shots, master_seed)
    return evaluate_cells(dataset, cells, variants, trials, master_seed, threads, max_test_per_class,
                          {"sweep_axis": axis, "sweep_values": [str(v) for v in values]})
