"""Command line entry point: ``csid <subcommand>``.

Exit codes: 0 success, 1 usage/config, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .baseline import gamut_cv
from .classifier import FittedPipeline, fit_pipeline, stratified_cv
from .colorspace import MANIFEST_NAME, SPACES, Registry, build_dataset, read_manifest
from .config import PipelineConfig
from .diagnostics import residual_diagnostics
from .embedding import INTER_PAIRS, INTRA_PAIRS
from .errors import (BundleMismatchError, ConfigError, CsidError, DataError, DegenerateClassError,
                     InsufficientDataError)
from .features import extract_features, feature_length, read_store_rows, write_store_rows
from .imaging import load_image

log = logging.getLogger("csid")

BUNDLE_VERSION = 1
CHECKPOINT_EVERY = 20


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _require(value, what):
    if value is None:
        raise ConfigError(f"{what} is not set (pass it on the command line or in --config)")
    return value


def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, indent=1, sort_keys=True) if args.json else text)


def _registry(cfg: PipelineConfig) -> Registry:
    return Registry(cfg.space_overrides)


def cmd_dataset(cfg: PipelineConfig, args) -> Path:
    src = _require(cfg.source_dir, "source directory")
    out = _require(cfg.corpus_dir, "corpus directory")
    manifest = build_dataset(src, out, cfg.source_space, _registry(cfg))
    rows = read_manifest(manifest)
    counts = {s: sum(r["space"] == s for r in rows) for s in SPACES}
    text = "\n".join([f"wrote {len(rows)} images to {out}"] + [f"  {s:<14}{n}" for s, n in counts.items()])
    _emit(args, {"manifest": str(manifest), "rows": len(rows), "per_space": counts}, text)
    return manifest


def _extract_one(path: Path, image_id: str, label, cfg: PipelineConfig):
    img = load_image(path)
    if label is not None:
        img = img.with_tag(label)
    return extract_features(img, cfg.mode, cfg.J, cfg.fit_config(), image_id=image_id)


def _safe_extract(path, image_id, label, cfg):
    try:
        return _extract_one(path, image_id, label, cfg), None
    except CsidError as exc:
        return None, f"{image_id}: {exc}"


def cmd_extract(cfg: PipelineConfig, args) -> Path:
    corpus = Path(_require(cfg.corpus_dir, "corpus directory"))
    store_path = Path(cfg.features or corpus / "features.jsonl")
    manifest = corpus / MANIFEST_NAME
    if not manifest.exists():
        raise DataError(f"no manifest at {manifest}")
    rows = read_manifest(manifest)
    fp = cfg.fingerprint()
    # rows written under other settings are kept untouched
    stored = read_store_rows(store_path)
    done = {v.image_id for v, row_fp in stored if row_fp == fp}
    todo = [r for r in rows if r["file"] not in done]
    log.info("%d images, %d already extracted, %d to go", len(rows), len(done), len(todo))

    failures = []
    for start in range(0, len(todo), CHECKPOINT_EVERY):
        chunk = todo[start:start + CHECKPOINT_EVERY]
        results = Parallel(n_jobs=cfg.jobs)(
            delayed(_safe_extract)(corpus / r["file"], r["file"], r.get("space"), cfg) for r in chunk)
        for vec, err in results:
            if err:
                log.warning("extraction failed: %s", err)
                failures.append(err)
            else:
                stored.append((vec, fp))
        write_store_rows(store_path, stored)
    n_new = len(todo) - len(failures)
    text = (f"extracted {n_new} new feature vectors ({cfg.mode}, J={cfg.J}, length "
            f"{feature_length(cfg.mode, cfg.J)}); {len(done)} reused; {len(failures)} failed")
    _emit(args, {"store": str(store_path), "new": n_new, "reused": len(done),
                 "failed": failures, "fingerprint": fp}, text)
    if rows and len(failures) > 0.1 * len(rows):
        raise DataError(f"{len(failures)} of {len(rows)} images failed extraction")
    return store_path


def _load_training_set(cfg: PipelineConfig):
    corpus = Path(cfg.corpus_dir) if cfg.corpus_dir else None
    store_path = Path(cfg.features or (corpus / "features.jsonl" if corpus else ""))
    if not store_path.name or not store_path.exists():
        raise DataError(f"no feature store at {store_path}")
    fp = cfg.fingerprint()
    vectors = [v for v, f in read_store_rows(store_path) if f == fp and v.label is not None]
    if not vectors:
        raise DataError(f"feature store {store_path} holds no labeled rows for fingerprint {fp}")
    vectors.sort(key=lambda v: v.image_id)
    X = np.vstack([v.values for v in vectors])
    y = np.array([v.label for v in vectors])
    return vectors, X, y


def cmd_train(cfg: PipelineConfig, args) -> Path:
    vectors, X, y = _load_training_set(cfg)
    if len(set(y)) < 2:
        raise DegenerateClassError("degenerate-class: the feature store holds a single class")
    pipe = fit_pipeline(X, y, cfg.classifier, seed=cfg.seed)
    bundle = {"version": BUNDLE_VERSION, "fingerprint": cfg.fingerprint(),
              "extraction": cfg.extraction_settings(), "n_train": len(y),
              "pipeline": pipe.to_dict()}
    path = Path(cfg.bundle or Path(cfg.corpus_dir or ".") / "bundle.json")
    _atomic_write_text(path, json.dumps(bundle))
    text = f"trained on {len(y)} images ({len(set(y))} classes, l2={pipe.mlr.l2:g}); bundle: {path}"
    _emit(args, {"bundle": str(path), "n_train": len(y), "l2": pipe.mlr.l2}, text)
    return path


def load_bundle(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no bundle at {path}")
    with open(path) as fh:
        bundle = json.load(fh)
    if bundle.get("version") != BUNDLE_VERSION:
        raise BundleMismatchError(f"bundle-mismatch: unsupported bundle version {bundle.get('version')!r}")
    return bundle


def cmd_identify(cfg: PipelineConfig, args, explicit: bool):
    bundle = load_bundle(_require(cfg.bundle, "bundle path"))
    if explicit and cfg.fingerprint() != bundle["fingerprint"]:
        raise BundleMismatchError(f"bundle-mismatch: bundle fingerprint {bundle['fingerprint']} "
                                  f"!= extraction settings {cfg.fingerprint()}")
    ext = bundle["extraction"]
    run_cfg = PipelineConfig(J=ext["J"], mode=ext["mode"], seed=ext["fit"]["seed"])
    run_cfg.fit = run_cfg.fit.from_dict(ext["fit"])
    pipe = FittedPipeline.from_dict(bundle["pipeline"])
    img = load_image(args.image)
    vec = extract_features(img, run_cfg.mode, run_cfg.J, run_cfg.fit_config(), image_id=img.name)
    if vec.values.size != pipe.standardizer.mean.size:
        raise BundleMismatchError(f"bundle-mismatch: feature length {vec.values.size} vs "
                                  f"bundle {pipe.standardizer.mean.size}")
    probs = pipe.predict_proba(vec.values)[0]
    classes = pipe.mlr.classes
    top = classes[int(np.argmax(probs))]
    payload = {"image": str(args.image), "space": top,
               "probabilities": {c: float(p) for c, p in zip(classes, probs)}}
    text = "\n".join([top] + [f"  {c:<14}{p:.4f}" for c, p in zip(classes, probs)])
    _emit(args, payload, text)
    return payload


def _source_groups(cfg: PipelineConfig, vectors):
    """Source photo of every vector, from the corpus manifest; None when unavailable."""
    if not cfg.group_by_source or not cfg.corpus_dir:
        return None
    manifest = Path(cfg.corpus_dir) / MANIFEST_NAME
    if not manifest.exists():
        return None
    source = {r["file"]: r.get("source") for r in read_manifest(manifest)}
    groups = [source.get(v.image_id) for v in vectors]
    if any(g is None for g in groups):
        log.warning("some images have no source in the manifest; folds are not grouped")
        return None
    return np.array(groups)


def cmd_evaluate(cfg: PipelineConfig, args):
    vectors, X, y = _load_training_set(cfg)
    groups = _source_groups(cfg, vectors)
    report = stratified_cv(X, y, cfg.folds, cfg.classifier, seed=cfg.seed,
                           title=f"Embedding ({cfg.mode}, J={cfg.J}) + GDA + MLR", groups=groups)
    reports = [report]
    if cfg.baseline:
        corpus = Path(_require(cfg.corpus_dir, "corpus directory"))
        images = [load_image(corpus / v.image_id) for v in vectors]
        reports.append(gamut_cv(images, y, cfg.folds, cfg.baseline_bins, cfg.samples_per_image,
                                cfg.seed, groups=groups))
    payload = {"fingerprint": cfg.fingerprint(), "grouped_by_source": groups is not None,
               "reports": [r.to_dict() for r in reports]}
    text = "\n\n".join(r.format_table() for r in reports)
    if cfg.report_dir:
        out = Path(cfg.report_dir)
        _atomic_write_text(out / "report.json", json.dumps(payload, indent=1, sort_keys=True))
        _atomic_write_text(out / "report.txt", text + "\n")
    _emit(args, payload, text)
    return reports


def cmd_diagnose(cfg: PipelineConfig, args):
    corpus = Path(_require(cfg.corpus_dir, "corpus directory"))
    manifest = corpus / MANIFEST_NAME
    if manifest.exists():
        files = [r["file"] for r in read_manifest(manifest)]
    else:
        files = sorted(p.name for p in corpus.iterdir() if p.suffix.lower() in (".png", ".ppm"))
    if cfg.diagnose_limit:
        files = files[:cfg.diagnose_limit]
    pairs = {"intra": INTRA_PAIRS, "inter": INTER_PAIRS, "concat": INTRA_PAIRS + INTER_PAIRS}[cfg.mode]
    fit = cfg.fit_config()
    M = min(fit.M_candidates)
    entries, skipped = [], []
    for name in files:
        try:
            img = load_image(corpus / name)
            for p in pairs:
                d = residual_diagnostics(img.data[:, :, p.k1], img.data[:, :, p.k2], p, cfg.J, M,
                                         fit, seed=cfg.seed)
                entries.append({"image": name, **d})
        except (InsufficientDataError, DataError) as exc:
            log.warning("skipping %s: %s", name, exc)
            skipped.append(name)
    summary = summarize_diagnostics(entries)
    payload = {"fingerprint": cfg.fingerprint(), "summary": summary, "entries": entries,
               "skipped": skipped}
    text = "\n".join(f"{k:<28}{v:.4f}" if isinstance(v, float) else f"{k:<28}{v}"
                     for k, v in summary.items())
    if cfg.report_dir:
        out = Path(cfg.report_dir)
        _atomic_write_text(out / "diagnostics.json", json.dumps(payload, indent=1, sort_keys=True))
        _atomic_write_text(out / "diagnostics.txt", text + "\n")
    _emit(args, payload, text)
    return payload


def summarize_diagnostics(entries) -> dict:
    if not entries:
        return {"combinations": 0}
    full = [e["full"] for e in entries]
    kurt = [f["excess_kurtosis"] for f in full if np.isfinite(f["excess_kurtosis"])]
    sub = [e["embeddable"] for e in entries if e["embeddable"]]
    return {
        "combinations": len(entries),
        "full_reject_rate": float(np.mean([f["reject"] for f in full])),
        "mean_excess_kurtosis": float(np.mean(kurt)) if kurt else float("nan"),
        "embeddable_reject_rate": float(np.mean([s["reject"] for s in sub])) if sub else float("nan"),
        "gaussian_pixel_fraction": float(np.mean([e["gaussian_fraction"] for e in entries])),
    }


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="csid", description="Identify the RGB-family color space of an image.")
    ap.add_argument("--version", action="version", version=f"csid {__version__}")
    ap.add_argument("--config", help="pipeline config JSON")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--json", action="store_true", help="print JSON instead of text")
    ap.add_argument("--jobs", type=int, help="parallel workers for per-image work")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("dataset", help="synthesize the five-space corpus from source images")
    p.add_argument("--source", dest="source_dir")
    p.add_argument("--out", dest="corpus_dir")
    p.add_argument("--source-space", dest="source_space")

    def feature_opts(p):
        p.add_argument("--corpus", dest="corpus_dir")
        p.add_argument("--features")
        p.add_argument("--mode", choices=("intra", "inter", "concat"))
        p.add_argument("-J", "--J", type=int, dest="J")

    p = sub.add_parser("extract", help="fit embeddings and write the feature store")
    feature_opts(p)

    p = sub.add_parser("train", help="train standardizer + GDA + MLR on the feature store")
    feature_opts(p)
    p.add_argument("--bundle")

    p = sub.add_parser("identify", help="identify the color space of one image")
    p.add_argument("image")
    p.add_argument("--bundle")
    p.add_argument("--mode", choices=("intra", "inter", "concat"))
    p.add_argument("-J", "--J", type=int, dest="J")

    p = sub.add_parser("evaluate", help="stratified k-fold evaluation")
    feature_opts(p)
    p.add_argument("--folds", type=int)
    p.add_argument("--ungrouped", dest="group_by_source", action="store_false", default=None,
                   help="plain stratified folds (renderings of one source may straddle folds)")
    p.add_argument("--baseline", action="store_true", default=None, help="also run the gamut baseline")
    p.add_argument("--report-dir", dest="report_dir")

    p = sub.add_parser("diagnose", help="K-S normality diagnostics of embedding residuals")
    p.add_argument("--corpus", dest="corpus_dir")
    p.add_argument("--mode", choices=("intra", "inter", "concat"))
    p.add_argument("-J", "--J", type=int, dest="J")
    p.add_argument("--limit", type=int, dest="diagnose_limit")
    p.add_argument("--report-dir", dest="report_dir")
    return ap


OVERRIDABLE = ("seed", "jobs", "source_dir", "corpus_dir", "source_space", "features", "mode", "J",
               "bundle", "folds", "group_by_source", "baseline", "report_dir", "diagnose_limit")


def resolve_config(args):
    base = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    d = base.to_dict()
    explicit = bool(args.config)
    for key in OVERRIDABLE:
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
            if key in ("seed", "mode", "J"):
                explicit = True
    return PipelineConfig.from_dict(d), explicit


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, explicit = resolve_config(args)
        if args.command == "dataset":
            cmd_dataset(cfg, args)
        elif args.command == "extract":
            cmd_extract(cfg, args)
        elif args.command == "train":
            cmd_train(cfg, args)
        elif args.command == "identify":
            cmd_identify(cfg, args, explicit)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args)
        elif args.command == "diagnose":
            cmd_diagnose(cfg, args)
    except CsidError as exc:
        print(f"csid: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
