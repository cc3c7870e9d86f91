"""Feature/prototype/split files, result tables, and the synthetic dataset generator.

Binary feature files (``.fslf``) are little-endian: the magic ``FSLF``, then
u32 version (1), u32 rows, u32 columns, then rows*columns float32 values in
row-major order. Labels live in a sibling CSV ``<stem>.labels.csv`` with
columns ``row_id,class_id``. CSV feature files have the header
``id,class,f0,...,f{d-1}`` and values written with 17 significant digits.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import prng
from .errors import FormatError, SplitError, ValidationError
from .types import ORIGINS, DatasetSplit, FeatureMatrix, PrototypeSet

MAGIC = b"FSLF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")

DATASET_FILES = ("features.fslf", "features.labels.csv", "prototypes.csv", "split.json", "manifest.json")
RESULT_COLUMNS = ("variant", "config", "shot", "trial_count", "mean_accuracy", "std_error")


# -- binary matrices ---------------------------------------------------------

def write_fslf(matrix, path) -> None:
    X = np.asarray(matrix)
    if X.ndim != 2:
        raise ValidationError(f"expected a 2-d matrix, got shape {X.shape}")
    n, d = X.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, d))
        fh.write(np.ascontiguousarray(X, dtype="<f4").tobytes())


def read_fslf(path) -> np.ndarray:
    """Matrix stored in a binary feature file, as float64."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    magic, version, n, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    expected = _HEADER.size + 4 * n * d
    if len(raw) < expected:
        raise FormatError(f"{path}: truncated data, expected {expected} bytes, got {len(raw)}", offset=len(raw))
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes", offset=expected)
    data = np.frombuffer(raw, dtype="<f4", count=n * d, offset=_HEADER.size)
    return data.reshape(n, d).astype(np.float64)


def labels_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".labels.csv")


# -- labeled feature files ---------------------------------------------------

def _write_csv_rows(path, ids, classes, X):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "class"] + [f"f{j}" for j in range(X.shape[1])])
        for rid, cls, row in zip(ids, classes, X):
            w.writerow([rid, cls] + [format(v, ".17g") for v in row])


def _read_csv_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["id", "class"]:
        raise FormatError(f"{path}: expected header starting with 'id,class'", offset=0)
    d = len(rows[0]) - 2
    body = [r for r in rows[1:] if r]
    if not body:
        raise FormatError(f"{path}: no data rows")
    try:
        X = np.array([[float(v) for v in r[2:]] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if X.shape[1] != d or any(len(r) != d + 2 for r in body):
        raise FormatError(f"{path}: ragged rows, header declares {d} features")
    return [r[0] for r in body], [r[1] for r in body], X


def save_features(features: FeatureMatrix, path) -> None:
    """Write labeled features as ``.fslf`` (+ sibling labels) or ``.csv``."""
    path = Path(path)
    if path.suffix == ".csv":
        _write_csv_rows(path, features.row_ids, features.labels, features.data)
        return
    write_fslf(features.data, path)
    with open(labels_path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_id", "class_id"])
        w.writerows(zip(features.row_ids, features.labels))


def load_features(path) -> FeatureMatrix:
    path = Path(path)
    if path.suffix == ".csv":
        ids, classes, X = _read_csv_rows(path)
        return FeatureMatrix(X, classes, ids)
    X = read_fslf(path)
    lp = labels_path(path)
    if not lp.exists():
        raise FormatError(f"{path}: missing label file {lp.name}")
    with open(lp, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["row_id", "class_id"]:
        raise FormatError(f"{lp}: expected header 'row_id,class_id'", offset=0)
    body = [r for r in rows[1:] if r]
    if len(body) != X.shape[0]:
        raise FormatError(f"{lp}: {len(body)} labels for {X.shape[0]} rows")
    return FeatureMatrix(X, [r[1] for r in body], [r[0] for r in body])


def save_prototypes(protos: PrototypeSet, path) -> None:
    """CSV with the origin tag in the ``id`` column and the class id in ``class``."""
    _write_csv_rows(path, protos.origin, protos.class_ids, protos.matrix)


def load_prototypes(path) -> PrototypeSet:
    path = Path(path)
    if path.suffix != ".csv":
        fm = load_features(path)
        return PrototypeSet(fm.data, fm.labels)
    ids, classes, X = _read_csv_rows(path)
    origin = [i if i in ORIGINS else "given-base" for i in ids]
    return PrototypeSet(X, classes, origin)


# -- splits ------------------------------------------------------------------

def load_split(path) -> DatasetSplit:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SplitError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict) or "base_classes" not in obj or "novel_classes" not in obj:
        raise SplitError(f"{path}: expected an object with base_classes and novel_classes")
    return DatasetSplit(obj["base_classes"], obj["novel_classes"], obj.get("shots", 1))


def save_split(split: DatasetSplit, path) -> None:
    obj = {"base_classes": list(split.base_classes), "novel_classes": list(split.novel_classes),
           "shots": split.shots}
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


# -- datasets ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dataset:
    """Everything an evaluation needs.

    ``prototypes`` holds the true prototype of every class that has one
    (base prototypes are the only base-class information an episode sees;
    novel ones serve the oracle). ``train`` holds the few-shot pools, ``test``
    the held-out samples of all classes.
    """

    prototypes: PrototypeSet
    train: FeatureMatrix
    test: FeatureMatrix
    split: DatasetSplit
    name: str = "dataset"

    @property
    def base(self) -> PrototypeSet:
        p = self.prototypes.select(self.split.base_classes)
        return PrototypeSet(p.matrix, p.class_ids, ("given-base",) * len(p))

    @property
    def oracle_novel(self) -> PrototypeSet:
        p = self.prototypes.select(self.split.novel_classes)
        return PrototypeSet(p.matrix, p.class_ids, ("oracle-novel",) * len(p))

    @property
    def novel_train(self) -> FeatureMatrix:
        wanted = set(self.split.novel_classes)
        return self.train.subset([i for i, c in enumerate(self.train.labels) if c in wanted])

    def with_split(self, split: DatasetSplit) -> Dataset:
        known = set(self.prototypes.class_ids)
        missing = [c for c in split.base_classes if c not in known]
        if missing:
            raise SplitError(f"no prototype for base classes {missing[:5]}")
        return Dataset(self.prototypes, self.train, self.test, split, self.name)

    def identity(self) -> str:
        """Content hash of the arrays and labels (split excluded)."""
        h = hashlib.sha256()
        for arr in (self.prototypes.matrix, self.train.data, self.test.data):
            h.update(np.ascontiguousarray(arr).tobytes())
        for seq in (self.prototypes.class_ids, self.train.labels, self.test.labels):
            h.update("\x1f".join(seq).encode())
        return h.hexdigest()[:16]


def save_dataset(ds: Dataset, out_dir, manifest: dict | None = None) -> list[Path]:
    """Write the five dataset files; sample rows are tagged ``train/<i>`` and ``test/<i>``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = np.vstack([ds.train.data, ds.test.data])
    ids = [f"train/{i}" for i in range(ds.train.n)] + [f"test/{i}" for i in range(ds.test.n)]
    save_features(FeatureMatrix(data, ds.train.labels + ds.test.labels, ids), out / "features.fslf")
    origin = ["given-base" if c in set(ds.split.base_classes) else "oracle-novel"
              for c in ds.prototypes.class_ids]
    save_prototypes(PrototypeSet(ds.prototypes.matrix, ds.prototypes.class_ids, origin), out / "prototypes.csv")
    save_split(ds.split, out / "split.json")
    body = {"name": ds.name, "identity": ds.identity(), **(manifest or {})}
    (out / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return [out / f for f in DATASET_FILES]


def load_dataset(path) -> Dataset:
    path = Path(path)
    fm = load_features(path / "features.fslf")
    train_rows = [i for i, r in enumerate(fm.row_ids) if r.startswith("train/")]
    test_rows = [i for i, r in enumerate(fm.row_ids) if r.startswith("test/")]
    if not train_rows or not test_rows:
        raise FormatError(f"{path}: sample ids must be tagged train/<i> and test/<i>")
    split = load_split(path / "split.json")
    name = path.name
    manifest = path / "manifest.json"
    if manifest.exists():
        name = json.loads(manifest.read_text()).get("name", name)
    ds = Dataset(load_prototypes(path / "prototypes.csv"), fm.subset(train_rows), fm.subset(test_rows),
                 split, name)
    return ds.with_split(split)


# -- synthetic data ----------------------------------------------------------

KEY_MAP, KEY_LATENT, KEY_POOL, KEY_TRAIN, KEY_TEST = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a seeded dataset whose class centers lie on a smooth manifold.

    Class centers are ``f(z)`` for latent points ``z`` uniform in
    ``[-1, 1]^latent_dim``, with::

        f(z) = scale * (W z + sum_k a_k exp(-|z - mu_k|^2 / (2 s_k^2))) + offset

    ``W`` (d x latent_dim) has N(0, 1/latent_dim) entries, each ``a_k`` is
    N(0, I_d), ``mu_k`` uniform in ``[-1, 1]^latent_dim``, ``s_k`` uniform in
    ``[0.5, 1]``, and ``offset`` is ``scale`` times an N(0, I_d) draw.
    Samples are centers plus N(0, spread^2 I_d) noise. The true prototype of
    a class is the mean of ``pool_per_class`` hidden samples.
    """

    d: int = 32
    latent_dim: int = 4
    n_base: int = 80
    n_novel: int = 20
    samples_per_class: int = 50
    test_per_class: int = 20
    pool_per_class: int = 500
    spread: float = 1.0
    curvature: int = 8
    scale: float = 3.0
    seed: int = 0

    def __post_init__(self):
        for name in ("d", "latent_dim", "n_base", "n_novel", "samples_per_class",
                     "test_per_class", "pool_per_class"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.curvature < 0:
            raise ValidationError("curvature must be >= 0")
        if not self.latent_dim < self.d:
            raise ValidationError(f"latent_dim ({self.latent_dim}) must be smaller than d ({self.d})")
        if not self.spread > 0 or not self.scale > 0:
            raise ValidationError("spread and scale must be positive")
        if not 0 <= int(self.seed) <= prng.MASK:
            raise ValidationError("seed must be an unsigned 64-bit integer")

    def class_ids(self) -> list[str]:
        n = self.n_base + self.n_novel
        width = max(3, len(str(n - 1)))
        return [f"c{i:0{width}d}" for i in range(n)]


def synthetic_centers(spec: SyntheticSpec) -> np.ndarray:
    """Noise-free class centers, one row per class in ``spec.class_ids()`` order."""
    L, d, K = spec.latent_dim, spec.d, spec.curvature
    n = spec.n_base + spec.n_novel
    ms = prng.substream(spec.seed, KEY_MAP)
    W = prng.normal(prng.substream(ms, 0), d * L).reshape(d, L) / np.sqrt(L)
    amps = prng.normal(prng.substream(ms, 1), K * d).reshape(K, d)
    mus = prng.uniform(prng.substream(ms, 2), K * L, -1.0, 1.0).reshape(K, L)
    widths = prng.uniform(prng.substream(ms, 3), K, 0.5, 1.0)
    offset = prng.normal(prng.substream(ms, 4), d)
    ls = prng.substream(spec.seed, KEY_LATENT)
    Z = np.vstack([prng.uniform(prng.substream(ls, c), L, -1.0, 1.0) for c in range(n)])
    sq = ((Z[:, None, :] - mus[None, :, :]) ** 2).sum(axis=2)
    bumps = np.exp(-sq / (2.0 * widths[None, :] ** 2))
    return spec.scale * (Z @ W.T + bumps @ amps + offset[None, :])


def _class_samples(spec, key, c, count, center):
    s = prng.substream(spec.seed, key, c)
    return center[None, :] + spec.spread * prng.normal(s, count * spec.d).reshape(count, spec.d)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Seeded dataset; a pure function of ``spec``.

    Each class's pool, training and test draws come from its own substream
    keyed by class index, so classes can be generated in any order.
    """
    ids = spec.class_ids()
    centers = synthetic_centers(spec)
    protos, train, test = [], [], []
    for c, center in enumerate(centers):
        protos.append(_class_samples(spec, KEY_POOL, c, spec.pool_per_class, center).mean(axis=0))
        train.append(_class_samples(spec, KEY_TRAIN, c, spec.samples_per_class, center))
        test.append(_class_samples(spec, KEY_TEST, c, spec.test_per_class, center))
    base_ids, novel_ids = ids[:spec.n_base], ids[spec.n_base:]
    origin = ["given-base"] * spec.n_base + ["oracle-novel"] * spec.n_novel
    train_labels = [i for i in ids for _ in range(spec.samples_per_class)]
    test_labels = [i for i in ids for _ in range(spec.test_per_class)]
    return Dataset(
        PrototypeSet(np.vstack(protos), ids, origin),
        FeatureMatrix(np.vstack(train), train_labels, [f"train/{i}" for i in range(len(train_labels))]),
        FeatureMatrix(np.vstack(test), test_labels, [f"test/{i}" for i in range(len(test_labels))]),
        DatasetSplit(base_ids, novel_ids, 1),
        name=f"synthetic-{spec.seed}",
    )


def spec_to_dict(spec: SyntheticSpec) -> dict:
    return asdict(spec)


# -- result tables -----------------------------------------------------------

def _fmt(x):
    return "nan" if x is None or not np.isfinite(x) else f"{x:.6f}"


def write_results_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([r["variant"], r["config"], r["shot"], r["trial_count"],
                        _fmt(r["mean_accuracy"]), _fmt(r["std_error"])])


def format_table(rows) -> str:
    """Fixed-width text rendering of result rows."""
    header = ["variant", "config", "shot", "trials", "accuracy", "std.err"]
    body = [[r["variant"], r["config"], str(r["shot"]), str(r["trial_count"]),
             "FAILED" if not r["trial_count"] else f"{r['mean_accuracy']:.2f}",
             "" if not r["trial_count"] else f"({r['std_error']:.2f})"] for r in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in body]
    return "\n".join(lines) + "\n"
