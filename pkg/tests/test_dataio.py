import json
import struct

import numpy as np
import pytest

from oracles import splitmix64
from protofsl import dataio, prng
from protofsl.errors import FormatError, SplitError, ValidationError
from protofsl.types import FeatureMatrix, PrototypeSet


# -- prng --------------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 7, 2**64 - 1, 0x1234_5678_9ABC_DEF0])
def test_u64_matches_sequential_splitmix(seed):
    assert prng.u64(seed, 50).tolist() == splitmix64(seed, 50)


def test_u64_offset_continues_stream():
    assert prng.u64(3, 5, offset=10).tolist() == splitmix64(3, 15)[10:]


def test_uniform_and_normal_ranges():
    u = prng.uniform(11, 10_000)
    assert u.min() >= 0 and u.max() < 1
    z = prng.normal(11, 20_000)
    assert abs(z.mean()) < 0.05 and abs(z.std() - 1) < 0.05


def test_substreams_are_distinct_and_stable():
    a, b = prng.substream(5, 0), prng.substream(5, 1)
    assert a != b and prng.substream(5, 0) == a
    assert prng.substream(5, 2, 3) == prng.substream(prng.substream(5, 2), 3)


# -- binary format -----------------------------------------------------------

def test_fslf_roundtrip_bitwise(tmp_path, rng):
    X = rng.standard_normal((3, 4)).astype(np.float32).astype(np.float64)
    dataio.write_fslf(X, tmp_path / "x.fslf")
    Y = dataio.read_fslf(tmp_path / "x.fslf")
    assert Y.dtype == np.float64 and Y.tobytes() == X.tobytes()


def test_fslf_layout(tmp_path):
    dataio.write_fslf(np.array([[1.0, 2.0]]), tmp_path / "x.fslf")
    raw = (tmp_path / "x.fslf").read_bytes()
    assert raw[:4] == b"FSLF"
    assert struct.unpack("<III", raw[4:16]) == (1, 1, 2)
    assert struct.unpack("<2f", raw[16:]) == (1.0, 2.0)


def test_fslf_truncated(tmp_path, rng):
    path = tmp_path / "x.fslf"
    dataio.write_fslf(rng.standard_normal((3, 4)), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(FormatError) as info:
        dataio.read_fslf(path)
    assert info.value.offset == len(raw) - 5
    path.write_bytes(raw[:10])
    with pytest.raises(FormatError):
        dataio.read_fslf(path)


def test_fslf_bad_magic_and_version(tmp_path):
    path = tmp_path / "x.fslf"
    path.write_bytes(b"NOPE" + struct.pack("<III", 1, 0, 0))
    with pytest.raises(FormatError) as info:
        dataio.read_fslf(path)
    assert info.value.offset == 0
    path.write_bytes(b"FSLF" + struct.pack("<III", 9, 0, 0))
    with pytest.raises(FormatError) as info:
        dataio.read_fslf(path)
    assert info.value.offset == 4


def test_labeled_features_roundtrip_binary(tmp_path, rng):
    X = rng.standard_normal((4, 3)).astype(np.float32).astype(np.float64)
    fm = FeatureMatrix(X, ["a", "b", "a", "c"], ["r0", "r1", "r2", "r3"])
    dataio.save_features(fm, tmp_path / "f.fslf")
    assert (tmp_path / "f.labels.csv").read_text().splitlines()[0] == "row_id,class_id"
    back = dataio.load_features(tmp_path / "f.fslf")
    assert back.labels == fm.labels and back.row_ids == fm.row_ids
    assert back.data.tobytes() == X.tobytes()


def test_csv_roundtrip_exact(tmp_path, rng):
    X = rng.standard_normal((5, 3)) * 10.0 ** rng.integers(-200, 200, size=(5, 3))
    fm = FeatureMatrix(X, list("abcde"))
    dataio.save_features(fm, tmp_path / "f.csv")
    back = dataio.load_features(tmp_path / "f.csv")
    assert back.data.tobytes() == X.tobytes()


def test_csv_parse_two_rows(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("id,class,f0,f1,f2\ns1,cat,0.5,1,2\ns2,dog,3,4,5e-1\n")
    fm = dataio.load_features(path)
    assert fm.data.shape == (2, 3) and fm.labels == ("cat", "dog")
    np.testing.assert_array_equal(fm.data[1], [3, 4, 0.5])


def test_csv_bad_header(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("x,y\n1,2\n")
    with pytest.raises(FormatError):
        dataio.load_features(path)


def test_prototype_csv_keeps_origin(tmp_path):
    p = PrototypeSet([[1.0, 2.0], [3.0, 4.0]], ["a", "b"], ["given-base", "estimated-novel"])
    dataio.save_prototypes(p, tmp_path / "p.csv")
    back = dataio.load_prototypes(tmp_path / "p.csv")
    assert back.origin == p.origin and back.class_ids == p.class_ids


# -- splits ------------------------------------------------------------------

def test_load_split(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"base_classes": ["a", "b"], "novel_classes": ["c"]}))
    s = dataio.load_split(path)
    assert s.base_classes == ("a", "b") and s.novel_classes == ("c",) and s.shots == 1


def test_load_split_overlap(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"base_classes": ["a"], "novel_classes": ["a"]}))
    with pytest.raises(SplitError):
        dataio.load_split(path)


def test_load_split_imagenet_sized(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"base_classes": [f"n{i:05d}" for i in range(800)],
                                "novel_classes": [f"n{i:05d}" for i in range(800, 1000)], "shots": 5}))
    s = dataio.load_split(path)
    assert (len(s.base_classes), len(s.novel_classes), s.shots) == (800, 200, 5)


# -- synthetic ---------------------------------------------------------------

SMALL = dict(d=8, latent_dim=2, n_base=12, n_novel=4, samples_per_class=6, test_per_class=3, pool_per_class=40)


def test_synthetic_bitwise_deterministic():
    a = dataio.generate_synthetic(dataio.SyntheticSpec(seed=9, **SMALL))
    b = dataio.generate_synthetic(dataio.SyntheticSpec(seed=9, **SMALL))
    for x, y in ((a.prototypes.matrix, b.prototypes.matrix), (a.train.data, b.train.data), (a.test.data, b.test.data)):
        assert x.tobytes() == y.tobytes()
    assert a.identity() == b.identity()
    c = dataio.generate_synthetic(dataio.SyntheticSpec(seed=10, **SMALL))
    assert c.identity() != a.identity()


def test_synthetic_shapes_and_split():
    ds = dataio.generate_synthetic(dataio.SyntheticSpec(seed=1, **SMALL))
    assert len(ds.base) == 12 and len(ds.oracle_novel) == 4
    assert ds.novel_train.n == 4 * 6 and set(ds.novel_train.labels) == set(ds.split.novel_classes)
    assert ds.test.n == 16 * 3
    assert set(ds.oracle_novel.origin) == {"oracle-novel"}


def test_synthetic_tiny_spread_collapses_to_centers():
    spec = dataio.SyntheticSpec(seed=4, spread=1e-12, **SMALL)
    ds = dataio.generate_synthetic(spec)
    centers = dataio.synthetic_centers(spec)
    for fm in (ds.train, ds.test):
        for row, label in zip(fm.data, fm.labels):
            np.testing.assert_allclose(row, centers[int(label[1:])], atol=1e-9)


def test_synthetic_prototypes_are_pool_means():
    spec = dataio.SyntheticSpec(seed=2, **SMALL)
    ds = dataio.generate_synthetic(spec)
    centers = dataio.synthetic_centers(spec)
    for c in (0, 13):
        seed = prng.substream(spec.seed, dataio.KEY_POOL, c)
        pool = centers[c] + spec.spread * prng.normal(seed, spec.pool_per_class * spec.d).reshape(-1, spec.d)
        np.testing.assert_array_equal(ds.prototypes.matrix[c], pool.mean(axis=0))


def test_synthetic_centers_lie_on_low_dimensional_manifold():
    spec = dataio.SyntheticSpec(d=10, latent_dim=2, n_base=400, n_novel=1, seed=0)
    C = dataio.synthetic_centers(spec)
    ratios = []
    for i in range(0, 400, 20):
        nb = C[np.argsort(np.linalg.norm(C - C[i], axis=1))[:12]]
        s = np.linalg.svd(nb - nb.mean(axis=0), compute_uv=False)
        ratios.append(s / s[0])
    mean = np.mean(ratios, axis=0)
    # two strong directions, then rapid decay
    assert mean[1] > 0.3
    assert mean[2] < 0.2 and mean[3] < 0.06 and mean[4] < 0.03


@pytest.mark.parametrize("kwargs", [{"latent_dim": 40, "d": 32}, {"spread": 0.0}, {"n_base": 0}])
def test_synthetic_spec_validation(kwargs):
    with pytest.raises(ValidationError):
        dataio.SyntheticSpec(**kwargs)


def test_dataset_roundtrip(tmp_path):
    ds = dataio.generate_synthetic(dataio.SyntheticSpec(seed=3, **SMALL))
    files = dataio.save_dataset(ds, tmp_path)
    assert sorted(p.name for p in files) == sorted(dataio.DATASET_FILES)
    back = dataio.load_dataset(tmp_path)
    assert back.split == ds.split
    assert back.train.labels == ds.train.labels and back.test.labels == ds.test.labels
    np.testing.assert_allclose(back.train.data, ds.train.data, rtol=1e-6)
    np.testing.assert_array_equal(back.prototypes.matrix, ds.prototypes.matrix)


def test_results_csv_columns(tmp_path):
    rows = [{"variant": "NA", "config": "shots=1", "shot": 1, "trial_count": 2,
             "mean_accuracy": 50.0, "std_error": 1.25},
            {"variant": "M1", "config": "shots=1", "shot": 1, "trial_count": 0,
             "mean_accuracy": float("nan"), "std_error": float("nan")}]
    dataio.write_results_csv(rows, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines == ["variant,config,shot,trial_count,mean_accuracy,std_error",
                     "NA,shots=1,1,2,50.000000,1.250000", "M1,shots=1,1,0,nan,nan"]
    assert "FAILED" in dataio.format_table(rows)
