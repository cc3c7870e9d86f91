"""Command-line driver: ``protofsl {synth,estimate,classify,evaluate,sweep}``.

Settings resolve as CLI flag > ``--config`` JSON value > ``--profile``
defaults, and the effective configuration is written to ``manifest.json``
in the output directory. Exit status: 0 success, 1 invalid input, 2 runtime
or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, dataio, harness, kernels
from .errors import NumericalError, ProtoFSLError, RankDeficient, ValidationError
from .markov import TwoPassClassifier, classify_nn
from .subspace import base_neighbor_table, estimate_prototype
from .types import PROFILES, HyperParams, PrototypeSet, class_means, validate_episode

log = logging.getLogger("protofsl")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

HP_FLAGS = {
    "r": int, "q": int, "k_prime": int, "alpha1": float, "alpha2": float,
    "rank_tol": float, "equilibrium_tol": float, "bandwidth": float, "u0_mode": str,
}
SYNTH_FLAGS = {
    "dim": ("d", int), "latent_dim": ("latent_dim", int), "base": ("n_base", int),
    "novel": ("n_novel", int), "samples_per_class": ("samples_per_class", int),
    "test_per_class": ("test_per_class", int), "pool_per_class": ("pool_per_class", int),
    "spread": ("spread", float), "curvature": ("curvature", int), "scale": ("scale", float),
}


class RunFailed(ProtoFSLError):
    pass


def _int_list(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _common(p):
    p.add_argument("--config", type=Path, help="JSON file of flag values (flags override it)")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--threads", type=int, help="worker threads; affects speed only")
    p.add_argument("-v", "--verbose", action="store_true")


def _hp_flags(p):
    p.add_argument("--profile", choices=sorted(PROFILES), help="hyperparameter defaults (default: imagenet)")
    for name, typ in HP_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)


def _synth_flags(p):
    for flag, (_, typ) in SYNTH_FLAGS.items():
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protofsl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset")
    _common(p)
    _synth_flags(p)

    p = sub.add_parser("estimate", help="estimate novel-class prototypes")
    _common(p)
    _hp_flags(p)
    p.add_argument("--data", type=Path, help="dataset directory (shots are drawn from it)")
    p.add_argument("--shots", type=int, help="shots per novel class when drawing from --data")
    p.add_argument("--trial", type=int, help="trial index whose draw to use with --data")
    p.add_argument("--base-prototypes", dest="base_prototypes", type=Path, help="base prototype file")
    p.add_argument("--samples", type=Path, help="labeled novel-class samples (.csv or .fslf)")

    p = sub.add_parser("classify", help="classify test samples against prototypes")
    _common(p)
    _hp_flags(p)
    p.add_argument("--data", type=Path, help="dataset directory supplying base prototypes and test samples")
    p.add_argument("--base-prototypes", dest="base_prototypes", type=Path)
    p.add_argument("--novel-prototypes", dest="novel_prototypes", type=Path, required=True)
    p.add_argument("--test", type=Path, help="labeled test samples (.csv or .fslf)")
    p.add_argument("--method", choices=("nn", "two-pass"))

    for name, text in (("evaluate", "run the evaluation protocol"), ("sweep", "sweep one parameter")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _hp_flags(p)
        _synth_flags(p)
        p.add_argument("--data", type=Path, help="dataset directory (default: synthesize one)")
        p.add_argument("--variants", help="comma list of NA,M1,M2,M1_M2,ORACLE (default: all)")
        p.add_argument("--shots", help="comma list of shot counts" if name == "evaluate" else "shot count")
        p.add_argument("--trials", type=int)
        p.add_argument("--max-test-per-class", dest="max_test_per_class", type=int)
        if name == "sweep":
            p.add_argument("--axis", choices=harness.SWEEP_AXES)
            p.add_argument("--values", help="comma list of axis values")
    return parser


def resolve(args) -> dict:
    """Effective settings: CLI flags over config file over profile defaults."""
    cfg = {}
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ValidationError(f"config {args.config} must hold a JSON object")
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "verbose")}
    merged = {**cfg, **flags}
    for key in ("out", "data", "base_prototypes", "samples", "novel_prototypes", "test"):
        if merged.get(key) is not None:
            merged[key] = str(merged[key])
    return merged


def hyperparams(conf: dict) -> HyperParams:
    profile = conf.get("profile", "imagenet")
    if profile not in PROFILES:
        raise ValidationError(f"unknown profile {profile!r}")
    changes = {k: HP_FLAGS[k](conf[k]) for k in HP_FLAGS if conf.get(k) is not None}
    hp = PROFILES[profile].replace(**changes)
    conf.update(hp.to_dict(), profile=profile)
    return hp


def synthetic_spec(conf: dict) -> dataio.SyntheticSpec:
    kwargs = {field: typ(conf[flag]) for flag, (field, typ) in SYNTH_FLAGS.items() if conf.get(flag) is not None}
    spec = dataio.SyntheticSpec(seed=int(conf.get("seed", 0)), **kwargs)
    conf["synthetic"] = dataio.spec_to_dict(spec)
    return spec


def _out_dir(conf) -> Path:
    out = Path(conf.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, conf: dict, extra=None):
    body = {"command": command, "version": __version__, "config": conf, **(extra or {})}
    (out / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True, default=str) + "\n")


def cmd_synth(conf: dict) -> int:
    spec = synthetic_spec(conf)
    out = _out_dir(conf)
    ds = dataio.generate_synthetic(spec)
    files = dataio.save_dataset(ds, out, {"command": "synth", "version": __version__,
                                          "seed": spec.seed, "synthetic": dataio.spec_to_dict(spec)})
    print(f"wrote {len(files)} files to {out} (dataset {ds.identity()})")
    return EXIT_OK


def _estimate_one(x, base, hp, class_id, table):
    """Per-class estimate with the q-1 retry policy; returns (estimate, attempts)."""
    attempts = []
    for q in range(hp.q, max(hp.q - harness.MAX_Q_RETRIES, 1) - 1, -1):
        try:
            t = table if q == hp.q else base_neighbor_table(base.matrix, q)
            return estimate_prototype(x, base, hp.replace(q=q), class_id, t), attempts
        except RankDeficient as exc:
            attempts.append({"q": q, "error": str(exc)})
    raise RunFailed(attempts[-1]["error"])


def cmd_estimate(conf: dict) -> int:
    hp = hyperparams(conf)
    if conf.get("data"):
        if conf.get("base_prototypes") or conf.get("samples"):
            raise ValidationError("give either --data or --base-prototypes/--samples, not both")
        ds = dataio.load_dataset(conf["data"])
        shots = int(conf.get("shots", ds.split.shots))
        seed = harness.trial_seed(int(conf.get("seed", 0)), int(conf.get("trial", 0)))
        ep = harness.sample_episode(ds, ds.split, shots, seed)
        base, samples = ep.base, ep.shots
    elif conf.get("base_prototypes") and conf.get("samples"):
        base = dataio.load_prototypes(conf["base_prototypes"])
        samples = dataio.load_features(conf["samples"])
    else:
        raise ValidationError("estimate needs --data or both --base-prototypes and --samples")
    means = class_means(samples)
    report = validate_episode(base, means.matrix, hp)
    if not report.ok:
        raise ValidationError(str(report))
    table = base_neighbor_table(base.matrix, hp.q)
    rows, diagnostics, failed = [], [], []
    for i, c in enumerate(means.class_ids):
        x = means.matrix[i]
        try:
            est, attempts = _estimate_one(x, base, hp, c, table)
        except (RunFailed, NumericalError) as exc:
            failed.append(c)
            diagnostics.append({"class_id": c, "status": "failed", "error": str(exc)})
            continue
        rows.append((c, est.prototype))
        diagnostics.append({
            "class_id": c, "status": "ok", "q_used": est.q_used, "retries": attempts,
            "shift_from_shot_mean": float(np.linalg.norm(est.prototype - x)),
            "neighbor_ids": [base.class_ids[j] for j in est.neighbors.neighbor_indices],
            "neighbor_distances": est.neighbors.distances.tolist(),
        })
    out = _out_dir(conf)
    dataio.save_prototypes(means, out / "shot_means.csv")
    if rows:
        est_set = PrototypeSet(np.vstack([p for _, p in rows]), [c for c, _ in rows],
                               ("estimated-novel",) * len(rows))
        dataio.save_prototypes(est_set, out / "estimated_prototypes.csv")
    (out / "estimate_diagnostics.json").write_text(json.dumps(diagnostics, indent=2) + "\n")
    _write_manifest(out, "estimate", conf)
    print(f"estimated {len(rows)} of {len(means)} novel prototypes into {out}")
    if failed:
        log.error("estimation failed for %d class(es): %s", len(failed), ", ".join(failed))
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_classify(conf: dict) -> int:
    hp = hyperparams(conf)
    novel = dataio.load_prototypes(conf["novel_prototypes"])
    if conf.get("data"):
        ds = dataio.load_dataset(conf["data"])
        base, test = ds.base, ds.test
        if conf.get("base_prototypes"):
            base = dataio.load_prototypes(conf["base_prototypes"])
        if conf.get("test"):
            test = dataio.load_features(conf["test"])
    elif conf.get("base_prototypes") and conf.get("test"):
        base = dataio.load_prototypes(conf["base_prototypes"])
        test = dataio.load_features(conf["test"])
    else:
        raise ValidationError("classify needs --data or both --base-prototypes and --test")
    protos = base.concat(novel)
    method = conf.get("method", "two-pass")
    conf["method"] = method
    if method == "nn":
        labels = classify_nn(test.data, protos)
        extra = [("", "")] * test.n
    else:
        clf = TwoPassClassifier(protos, base.class_ids, novel.class_ids, hp.k_prime, hp.bandwidth,
                                hp.u0_mode, hp.equilibrium_tol)
        res = clf.predict(test.data)
        labels = res.labels
        extra = [(protos.class_ids[b], protos.class_ids[n]) for b, n in zip(res.base_winner, res.novel_winner)]
    out = _out_dir(conf)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "true_class", "predicted", "base_winner", "novel_winner"])
        for rid, truth, pred, (bw, nw) in zip(test.row_ids, test.labels, labels, extra):
            w.writerow([rid, truth, pred, bw, nw])
    _write_manifest(out, "classify", conf)
    known = set(protos.class_ids)
    if all(c in known for c in test.labels):
        print(f"class-wise accuracy: {harness.classwise_accuracy(labels, test.labels):.2f}%")
    print(f"wrote {test.n} predictions to {out / 'predictions.csv'}")
    return EXIT_OK


def _dataset(conf: dict) -> dataio.Dataset:
    synth_given = [f for f in SYNTH_FLAGS if conf.get(f) is not None]
    if conf.get("data"):
        if synth_given or conf.get("synthetic"):
            raise ValidationError("give either --data or synthetic dataset flags, not both")
        return dataio.load_dataset(conf["data"])
    if isinstance(conf.get("synthetic"), dict):
        for flag, (field, _) in SYNTH_FLAGS.items():
            conf.setdefault(flag, conf["synthetic"].get(field))
    return dataio.generate_synthetic(synthetic_spec(conf))


def _emit(report: harness.EvalReport, conf: dict, command: str) -> int:
    out = _out_dir(conf)
    dataio.write_results_csv(report.rows, out / "results.csv")
    (out / "results.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True, default=str) + "\n")
    table = dataio.format_table(report.rows)
    (out / "results.txt").write_text(table)
    _write_manifest(out, command, conf, {"dataset_identity": report.provenance["dataset_identity"],
                                         "kernel_backend": kernels.BACKEND})
    print(table, end="")
    for f in report.failures:
        log.warning("failed: %s %s trial %d: %s", f["variant"], f["config"], f["trial"], f["error"])
    if report.rows and all(r["trial_count"] == 0 for r in report.rows):
        return EXIT_RUNTIME
    return EXIT_OK


def _common_eval(conf):
    hp = hyperparams(conf)
    ds = _dataset(conf)
    variants = [harness.Variant.parse(v) for v in str(conf.get("variants", "NA,M1,M2,M1_M2,ORACLE")).split(",")]
    conf["variants"] = ",".join(v.value for v in variants)
    conf.setdefault("trials", 10)
    conf.setdefault("threads", 1)
    conf.setdefault("seed", 0)
    return hp, ds, variants


def cmd_evaluate(conf: dict) -> int:
    hp, ds, variants = _common_eval(conf)
    shots = _int_list(conf.get("shots", "1"))
    conf["shots"] = ",".join(map(str, shots))
    report = harness.evaluate(ds, hp, shots, variants, int(conf["trials"]), int(conf["seed"]),
                              int(conf["threads"]), conf.get("max_test_per_class"))
    return _emit(report, conf, "evaluate")


def cmd_sweep(conf: dict) -> int:
    hp, ds, variants = _common_eval(conf)
    if not conf.get("axis") or not conf.get("values"):
        raise ValidationError("sweep needs --axis and --values")
    values = [v.strip() for v in str(conf["values"]).split(",") if v.strip()]
    shots = int(conf.get("shots", 1))
    report = harness.sweep(conf["axis"], values, ds, hp, shots, variants, int(conf["trials"]),
                           int(conf["seed"]), int(conf["threads"]), conf.get("max_test_per_class"))
    return _emit(report, conf, "sweep")


COMMANDS = {"synth": cmd_synth, "estimate": cmd_estimate, "classify": cmd_classify,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        conf = resolve(args)
        return COMMANDS[args.command](conf)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ProtoFSLError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
