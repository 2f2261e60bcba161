"""Command-line front end for the detection pipeline.

Verbs:
    extract   decode WAVs from a manifest and fill the feature cache
    split     export stratified cross-validation folds as CSV
    train     train one model per fold, with optional mixing augmentation
    predict   score a manifest with one or more checkpoints (ensembled)
    evaluate  AUC + ROC + thresholded error report for a score file
    grid      train across a hyperparameter grid and rank by mean val AUC

Every command echoes its fully resolved configuration to the output
directory as ``run_config.ini`` so runs are reproducible from the file
plus the seed. Exit code is 0 only when nothing failed.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .audio import DecodeError, decode_wav, standardize_clip
from .augment import (
    LabeledSample,
    adapt_test_mixing,
    augment_blocks,
    harmonize_domfreq_width,
)
from .cache import CacheError, read_feature_cache_entry, write_feature_cache
from .features import FeatureConfig, extract_features
from .manifest import Manifest, load_manifest
from .metrics import (
    SplitSpec,
    ensemble_average,
    evaluate_scores,
    roc_auc,
    stratified_splits,
)
from .model import CbrnnConfig, CbrnnModel, load_checkpoint, save_checkpoint
from .train import AdamConfig, TrainConfig, score_samples, train

__all__ = ["RunConfig", "main"]


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one pipeline run."""

    # paths
    audio_dir: str = ""
    manifest: str = ""
    cache_dir: str = ""
    output_dir: str = ""
    adapt_manifest: str = ""
    # features
    features: str = "both"          # mbe | domfreq | both
    band_limited: bool = False
    # model
    n_filters: int = 8
    rnn_units: int = 8
    fc_units: int = 8
    dropout: float = 0.25
    # train
    max_epochs: int = 500
    patience: int = 50
    batch_size: int = 32
    learning_rate: float = 0.001
    # augment
    blocks_mixing: bool = False
    test_mixing: bool = False
    allow_combined: bool = False
    # run
    seed: int = 0
    folds: int = 1
    train_fraction: float = 0.6
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    threshold: float = 0.5
    workers: int = 1

    _SECTIONS = {
        "paths": ("audio_dir", "manifest", "cache_dir", "output_dir",
                  "adapt_manifest"),
        "features": ("features", "band_limited"),
        "model": ("n_filters", "rnn_units", "fc_units", "dropout"),
        "train": ("max_epochs", "patience", "batch_size", "learning_rate"),
        "augment": ("blocks_mixing", "test_mixing", "allow_combined"),
        "run": ("seed", "folds", "train_fraction", "val_fraction",
                "test_fraction", "threshold", "workers"),
    }

    def __post_init__(self):
        if self.features not in ("mbe", "domfreq", "both"):
            raise ValueError(f"features must be mbe, domfreq, or both, "
                             f"got {self.features!r}")
        if self.blocks_mixing and self.test_mixing and not self.allow_combined:
            raise ValueError(
                "combining blocks mixing with test mixing degrades results; "
                "pass --allow-combined to run it anyway"
            )

    def save_ini(self, path) -> None:
        parser = configparser.ConfigParser()
        for section, names in self._SECTIONS.items():
            parser[section] = {name: str(getattr(self, name)) for name in names}
        with open(path, "w") as fh:
            parser.write(fh)

    @classmethod
    def load_ini(cls, path) -> "RunConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(f"config file not found: {path}")
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for section, names in cls._SECTIONS.items():
            if not parser.has_section(section):
                continue
            for name in names:
                if not parser.has_option(section, name):
                    continue
                if types[name] == "bool":
                    kwargs[name] = parser.getboolean(section, name)
                elif types[name] == "int":
                    kwargs[name] = parser.getint(section, name)
                elif types[name] == "float":
                    kwargs[name] = parser.getfloat(section, name)
                else:
                    kwargs[name] = parser.get(section, name)
        return cls(**kwargs)

    @property
    def split_spec(self) -> SplitSpec:
        return SplitSpec(
            ratios=(self.train_fraction, self.val_fraction, self.test_fraction),
            folds=self.folds,
            seed=self.seed,
        )

    @property
    def feature_config(self) -> FeatureConfig:
        return FeatureConfig.band_limited() if self.band_limited else FeatureConfig()

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(
            max_epochs=self.max_epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            adam=AdamConfig(learning_rate=self.learning_rate),
            seed=self.seed,
        )

    def model_config(self, time_steps: int, mbe_bands: int,
                     domfreq_width: int) -> CbrnnConfig:
        if self.features == "both":
            classes: tuple[str, ...] = ("mbe", "domfreq")
        else:
            classes = (self.features,)
        if domfreq_width % 3 == 0:
            pool_domfreq = (3, domfreq_width // 3)
        else:
            pool_domfreq = (domfreq_width, 1)
        return CbrnnConfig(
            time_steps=time_steps,
            mbe_bands=mbe_bands,
            domfreq_slots=domfreq_width,
            feature_classes=classes,
            n_filters=self.n_filters,
            pool_freq_domfreq=pool_domfreq,
            rnn_units=self.rnn_units,
            fc_units=self.fc_units,
            dropout=self.dropout,
        )


# -- shared plumbing -----------------------------------------------------


def _cache_path(cache_dir: Path, clip_id: str) -> Path:
    return cache_dir / f"{clip_id}.bdfc"


def _load_samples(ids, labels: dict[str, int | None],
                  cache_dir: Path) -> list[LabeledSample]:
    missing = [cid for cid in ids if not _cache_path(cache_dir, cid).exists()]
    if missing:
        raise FileNotFoundError(
            f"{len(missing)} clip(s) missing from cache {cache_dir}: "
            f"{sorted(missing)[:20]}"
        )
    samples = []
    for cid in ids:
        _, pair = read_feature_cache_entry(_cache_path(cache_dir, cid))
        samples.append(LabeledSample(cid, pair, labels.get(cid)))
    return samples


def _probe_cache(ids, cache_dir: Path) -> tuple[int, int]:
    """(time_steps, mel_bands) of the first cached clip."""
    _, pair = read_feature_cache_entry(_cache_path(cache_dir, ids[0]))
    return pair.n_frames, pair.mbe.shape[1]


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _train_fold(manifest: Manifest, cfg: RunConfig, cache_dir: Path,
                fold_parts, fold_seq: np.random.SeedSequence):
    """Train one fold; returns (model, history, test_auc or None)."""
    labels = {e.clip_id: e.label for e in manifest}
    train_ids, val_ids, test_ids = fold_parts
    train_s = _load_samples(train_ids, labels, cache_dir)
    val_s = _load_samples(val_ids, labels, cache_dir)
    test_s = _load_samples(test_ids, labels, cache_dir) if test_ids else []

    blocks_seq, adapt_seq, model_seq, train_seq = fold_seq.spawn(4)
    if cfg.blocks_mixing:
        train_s = augment_blocks(train_s, np.random.default_rng(blocks_seq))
    if cfg.test_mixing:
        adapt = load_manifest(cfg.adapt_manifest)
        adapt_ids = list(adapt.ids)
        adapt_s = _load_samples(adapt_ids, {}, cache_dir)
        train_s = adapt_test_mixing(train_s, [s.features for s in adapt_s],
                                    np.random.default_rng(adapt_seq),
                                    test_ids=adapt_ids)

    width = max(s.features.domfreq.shape[1] for s in train_s)
    train_s = harmonize_domfreq_width(train_s, width)
    val_s = harmonize_domfreq_width(val_s, width)
    test_s = harmonize_domfreq_width(test_s, width)

    t, bands = train_s[0].features.n_frames, train_s[0].features.mbe.shape[1]
    model_cfg = cfg.model_config(t, bands, width)
    model = CbrnnModel(model_cfg, seed=int(model_seq.generate_state(1)[0]))
    train_cfg = replace(cfg.train_config, seed=int(train_seq.generate_state(1)[0]))
    model, history = train(model, train_s, val_s, train_cfg)

    test_auc = None
    if test_s:
        scores = score_samples(model, test_s)
        test_labels = np.array([s.label for s in test_s], dtype=np.float64)
        test_auc = roc_auc(scores, test_labels)
    return model, history, test_auc


# -- extract -------------------------------------------------------------


def _extract_one(args) -> tuple[str, str, str]:
    """Worker: returns (clip_id, sha256-or-empty, error-or-empty)."""
    clip_id, wav_path, out_path, band_limited = args
    try:
        clip = standardize_clip(decode_wav(Path(wav_path)))
        fcfg = FeatureConfig.band_limited() if band_limited else FeatureConfig()
        pair = extract_features(clip, fcfg)
        write_feature_cache(pair, Path(out_path), clip_id=clip_id)
        digest = hashlib.sha256(Path(out_path).read_bytes()).hexdigest()
        return clip_id, digest, ""
    except (DecodeError, CacheError, ValueError, OSError) as exc:
        return clip_id, "", str(exc)


def cmd_extract(cfg: RunConfig, force: bool) -> int:
    manifest = load_manifest(cfg.manifest, audio_dir=Path(cfg.audio_dir))
    cache_dir = Path(cfg.cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    cfg.save_ini(cache_dir / "run_config.ini")

    jobs = []
    cached = []
    for entry in manifest:
        out_path = _cache_path(cache_dir, entry.clip_id)
        if out_path.exists() and not force:
            digest = hashlib.sha256(out_path.read_bytes()).hexdigest()
            cached.append((entry.clip_id, digest))
            continue
        jobs.append((entry.clip_id, str(entry.path), str(out_path),
                     cfg.band_limited))

    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_extract_one, jobs))
    else:
        results = [_extract_one(job) for job in jobs]

    done = sorted((cid, digest) for cid, digest, err in results if not err)
    failures = sorted((cid, err) for cid, digest, err in results if err)

    # the manifest covers the whole cache, so reruns keep skipped rows
    _write_csv(cache_dir / "extraction_manifest.csv",
               ["clip_id", "path", "sha256"],
               [(cid, str(_cache_path(cache_dir, cid)), digest)
                for cid, digest in sorted(done + cached)])
    print(f"extracted {len(done)} clip(s), skipped {len(cached)} already "
          f"cached, {len(failures)} failure(s)")
    if failures:
        _write_csv(cache_dir / "failures.csv", ["clip_id", "error"], failures)
        print(f"failure report: {cache_dir / 'failures.csv'}", file=sys.stderr)
        return 1
    return 0


# -- split ---------------------------------------------------------------


def cmd_split(cfg: RunConfig) -> int:
    manifest = load_manifest(cfg.manifest)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save_ini(out_dir / "run_config.ini")
    folds = stratified_splits(manifest, cfg.split_spec)
    rows = []
    for fold_idx, (train_ids, val_ids, test_ids) in enumerate(folds, 1):
        for part, ids in zip(("train", "val", "test"),
                             (train_ids, val_ids, test_ids)):
            rows.extend((fold_idx, part, cid) for cid in ids)
    _write_csv(out_dir / "splits.csv", ["fold", "part", "clip_id"], rows)
    sizes = ", ".join(
        f"fold {i}: {len(tr)}/{len(va)}/{len(te)}"
        for i, (tr, va, te) in enumerate(folds, 1)
    )
    print(f"wrote {out_dir / 'splits.csv'} ({sizes})")
    return 0


# -- train ---------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> int:
    manifest = load_manifest(cfg.manifest)
    if not manifest.is_labeled:
        raise ValueError("training requires a fully labeled manifest")
    cache_dir = Path(cfg.cache_dir)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save_ini(out_dir / "run_config.ini")

    folds = stratified_splits(manifest, cfg.split_spec)
    fold_seqs = np.random.SeedSequence(cfg.seed).spawn(len(folds))

    summary_rows = []
    test_aucs = []
    for k, (parts, seq) in enumerate(zip(folds, fold_seqs), 1):
        model, history, test_auc = _train_fold(manifest, cfg, cache_dir,
                                               parts, seq)
        save_checkpoint(model, out_dir / f"fold{k}.ckpt")
        history.to_csv(out_dir / f"history_fold{k}.csv")
        summary_rows.append([k, history.epochs_run, history.best_epoch,
                             repr(history.best_val_auc),
                             "" if test_auc is None else repr(test_auc)])
        if test_auc is not None:
            test_aucs.append(test_auc)
        msg = (f"fold {k}: best val AUC {history.best_val_auc:.4f} "
               f"at epoch {history.best_epoch}/{history.epochs_run}")
        if test_auc is not None:
            msg += f", test AUC {test_auc:.4f}"
        print(msg)

    if test_aucs:
        summary_rows.append(["mean", "", "", "", repr(float(np.mean(test_aucs)))])
        summary_rows.append(["std", "", "", "", repr(float(np.std(test_aucs)))])
        print(f"mean test AUC over {len(test_aucs)} fold(s): "
              f"{float(np.mean(test_aucs)):.4f}")
    _write_csv(out_dir / "summary.csv",
               ["fold", "epochs_run", "best_epoch", "best_val_auc", "test_auc"],
               summary_rows)
    return 0


# -- predict -------------------------------------------------------------


def cmd_predict(cfg: RunConfig, checkpoint_paths: list[str],
                output: str) -> int:
    manifest = load_manifest(cfg.manifest)
    cache_dir = Path(cfg.cache_dir)
    ids = list(manifest.ids)
    if not ids:
        raise ValueError("manifest is empty")
    labels = {cid: None for cid in ids}
    samples = _load_samples(ids, labels, cache_dir)

    runs = []
    for ckpt_path in checkpoint_paths:
        model = load_checkpoint(ckpt_path)
        width = model.config.domfreq_slots
        native = samples[0].features.domfreq.shape[1]
        if width != native:
            if width % native:
                raise ValueError(
                    f"checkpoint {ckpt_path} expects peak width {width}, "
                    f"cache holds {native}: not an integer multiple"
                )
            scored = harmonize_domfreq_width(samples, width)
        else:
            scored = samples
        if model.config.time_steps != scored[0].features.n_frames:
            raise ValueError(
                f"checkpoint {ckpt_path} expects {model.config.time_steps} "
                f"frames, cache holds {scored[0].features.n_frames}"
            )
        scores = score_samples(model, scored)
        runs.append(dict(zip(ids, scores.tolist())))

    averaged = ensemble_average(runs)
    out_path = Path(output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out_path, ["clip_id", "score"],
               [(cid, repr(averaged[cid])) for cid in sorted(averaged)])
    print(f"wrote {out_path} ({len(averaged)} clips, "
          f"{len(checkpoint_paths)} checkpoint(s) averaged)")
    return 0


# -- evaluate ------------------------------------------------------------


def _read_scores_csv(path) -> dict[str, float]:
    scores: dict[str, float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["clip_id", "score"]:
            raise ValueError(f"{path}: expected a clip_id,score CSV")
        for row in reader:
            if not row:
                continue
            scores[row[0]] = float(row[1])
    return scores


def cmd_evaluate(cfg: RunConfig, scores_path: str) -> int:
    manifest = load_manifest(cfg.manifest)
    if not manifest.is_labeled:
        raise ValueError("evaluation requires a fully labeled manifest")
    scores = _read_scores_csv(scores_path)
    labels = {e.clip_id: e.label for e in manifest}
    report = evaluate_scores(scores, labels, threshold=cfg.threshold)

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save_ini(out_dir / "run_config.ini")

    n_pos = sum(1 for v in labels.values() if v == 1)
    n_neg = len(labels) - n_pos
    _write_csv(out_dir / "summary.csv",
               ["auc", "n_pos", "n_neg", "threshold"],
               [[repr(report.auc), n_pos, n_neg, repr(report.threshold)]])
    _write_csv(out_dir / "decisions.csv",
               ["clip_id", "score", "label", "decision"],
               [(cid, repr(scores[cid]), labels[cid],
                 "present" if scores[cid] > report.threshold else "absent")
                for cid in sorted(scores)])
    _write_csv(out_dir / "roc.csv", ["fpr", "tpr"],
               [(repr(fpr), repr(tpr)) for fpr, tpr in report.roc_points])
    _write_csv(out_dir / "errors.csv", ["clip_id", "kind"],
               [(cid, "fp") for cid in report.fp_ids]
               + [(cid, "fn") for cid in report.fn_ids])
    print(f"AUC {report.auc:.6f} ({n_pos} present / {n_neg} absent); "
          f"{len(report.fp_ids)} FP, {len(report.fn_ids)} FN at "
          f"threshold {report.threshold}")
    return 0


# -- grid ----------------------------------------------------------------


def cmd_grid(cfg: RunConfig, filters: list[int], rnn_units: list[int],
             fc_units: list[int], dropouts: list[float]) -> int:
    manifest = load_manifest(cfg.manifest)
    if not manifest.is_labeled:
        raise ValueError("the grid runner requires a fully labeled manifest")
    cache_dir = Path(cfg.cache_dir)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save_ini(out_dir / "run_config.ini")

    folds = stratified_splits(manifest, cfg.split_spec)
    rows = []
    for nf in filters:
        for rnn in rnn_units:
            for fc in fc_units:
                for rate in dropouts:
                    run_cfg = replace(cfg, n_filters=nf, rnn_units=rnn,
                                      fc_units=fc, dropout=rate)
                    key = json.dumps(
                        {"n_filters": nf, "rnn_units": rnn, "fc_units": fc,
                         "dropout": rate, "seed": cfg.seed},
                        sort_keys=True)
                    config_hash = hashlib.sha256(key.encode()).hexdigest()[:12]
                    fold_seqs = np.random.SeedSequence(cfg.seed).spawn(len(folds))
                    fold_aucs = []
                    param_count = 0
                    for parts, seq in zip(folds, fold_seqs):
                        model, history, _ = _train_fold(manifest, run_cfg,
                                                        cache_dir, parts, seq)
                        fold_aucs.append(history.best_val_auc)
                        param_count = model.parameter_count
                    mean_auc = float(np.mean(fold_aucs))
                    rows.append([config_hash, nf, rnn, fc, rate, param_count]
                                + [repr(a) for a in fold_aucs]
                                + [repr(mean_auc), mean_auc])
                    print(f"{config_hash}  filters={nf} rnn={rnn} fc={fc} "
                          f"dropout={rate}: mean val AUC {mean_auc:.4f} "
                          f"({param_count} params)")

    rows.sort(key=lambda r: -r[-1])
    n_folds = len(folds)
    header = (["config_hash", "n_filters", "rnn_units", "fc_units", "dropout",
               "param_count"]
              + [f"val_auc_fold{i + 1}" for i in range(n_folds)]
              + ["mean_val_auc"])
    _write_csv(out_dir / "grid.csv", header, [r[:-1] for r in rows])
    print(f"wrote {out_dir / 'grid.csv'} ({len(rows)} configurations)")
    return 0


# -- argument parsing ----------------------------------------------------


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI config file with resolved defaults")
    parser.add_argument("--seed", type=int, help="root random seed")


def _add_protocol(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--dev-protocol", action="store_true",
                       help="5 folds of 60/20/20 train/val/test")
    group.add_argument("--challenge-protocol", action="store_true",
                       help="3 folds of 80/20 train/val")
    parser.add_argument("--folds", type=int, help="override fold count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="birddetect",
        description="Bird call detection: features, training, scoring.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="decode WAVs and fill the feature cache")
    _add_common(p)
    p.add_argument("--manifest", help="CSV with itemid[,hasbird] rows")
    p.add_argument("--audio-dir", help="directory of <itemid>.wav files")
    p.add_argument("--cache-dir", help="feature cache directory")
    p.add_argument("--band-limited", action="store_true", default=None,
                   help="restrict features to the 3-8 kHz band")
    p.add_argument("--workers", type=int, help="parallel extraction workers")
    p.add_argument("--force", action="store_true",
                   help="re-extract clips that are already cached")

    p = sub.add_parser("split", help="export stratified CV folds")
    _add_common(p)
    _add_protocol(p)
    p.add_argument("--manifest")
    p.add_argument("--output-dir")

    p = sub.add_parser("train", help="train one model per fold")
    _add_common(p)
    _add_protocol(p)
    p.add_argument("--manifest")
    p.add_argument("--cache-dir")
    p.add_argument("--output-dir")
    p.add_argument("--features", choices=("mbe", "domfreq", "both"))
    p.add_argument("--blocks-mixing", action="store_true", default=None)
    p.add_argument("--test-mixing", action="store_true", default=None)
    p.add_argument("--allow-combined", action="store_true", default=None)
    p.add_argument("--adapt-manifest",
                   help="manifest of unlabeled clips for test mixing")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--n-filters", type=int)
    p.add_argument("--rnn-units", type=int)
    p.add_argument("--fc-units", type=int)
    p.add_argument("--dropout", type=float)

    p = sub.add_parser("predict", help="score a manifest with checkpoints")
    _add_common(p)
    p.add_argument("--checkpoint", action="append", required=True,
                   help="checkpoint path; repeat to ensemble")
    p.add_argument("--manifest")
    p.add_argument("--cache-dir")
    p.add_argument("--output", default="scores.csv", help="score CSV path")

    p = sub.add_parser("evaluate", help="AUC / ROC / error report")
    _add_common(p)
    p.add_argument("--scores", required=True, help="clip_id,score CSV")
    p.add_argument("--manifest")
    p.add_argument("--output-dir")
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("grid", help="hyperparameter grid over CV folds")
    _add_common(p)
    _add_protocol(p)
    p.add_argument("--manifest")
    p.add_argument("--cache-dir")
    p.add_argument("--output-dir")
    p.add_argument("--filters", type=_int_list, default=[8])
    p.add_argument("--rnn-units", type=_int_list, default=[8])
    p.add_argument("--fc-units", type=_int_list, default=[8])
    p.add_argument("--dropouts", type=_float_list, default=[0.25])
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--blocks-mixing", action="store_true", default=None)
    p.add_argument("--test-mixing", action="store_true", default=None)
    p.add_argument("--allow-combined", action="store_true", default=None)
    p.add_argument("--adapt-manifest")

    return parser


_FLAG_FIELDS = (
    "audio_dir", "manifest", "cache_dir", "output_dir", "adapt_manifest",
    "features", "band_limited", "n_filters", "rnn_units", "fc_units",
    "dropout", "max_epochs", "patience", "batch_size", "learning_rate",
    "blocks_mixing", "test_mixing", "allow_combined", "seed", "folds",
    "threshold", "workers",
)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load_ini(args.config) if getattr(args, "config", None) \
        else RunConfig()
    overrides = {}
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "dev_protocol", False):
        overrides.setdefault("folds", 5)
        overrides.update(train_fraction=0.6, val_fraction=0.2, test_fraction=0.2)
    elif getattr(args, "challenge_protocol", False):
        overrides.setdefault("folds", 3)
        overrides.update(train_fraction=0.8, val_fraction=0.2, test_fraction=0.0)
    return replace(cfg, **overrides) if overrides else cfg


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        value = getattr(cfg, name)
        if not value:
            raise ValueError(f"missing required setting: {name.replace('_', '-')}")
        if name in ("manifest", "adapt_manifest", "audio_dir") \
                and not Path(value).exists():
            raise FileNotFoundError(f"{name.replace('_', '-')} does not exist: {value}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "extract":
            _require(cfg, "manifest", "audio_dir", "cache_dir")
            return cmd_extract(cfg, force=args.force)
        if args.command == "split":
            _require(cfg, "manifest", "output_dir")
            return cmd_split(cfg)
        if args.command == "train":
            _require(cfg, "manifest", "cache_dir", "output_dir")
            if cfg.test_mixing:
                _require(cfg, "adapt_manifest")
            return cmd_train(cfg)
        if args.command == "predict":
            _require(cfg, "manifest", "cache_dir")
            return cmd_predict(cfg, args.checkpoint, args.output)
        if args.command == "evaluate":
            _require(cfg, "manifest", "output_dir")
            return cmd_evaluate(cfg, args.scores)
        if args.command == "grid":
            _require(cfg, "manifest", "cache_dir", "output_dir")
            if cfg.test_mixing:
                _require(cfg, "adapt_manifest")
            return cmd_grid(cfg, args.filters, args.rnn_units, args.fc_units,
                            args.dropouts)
        raise ValueError(f"unknown command {args.command!r}")
    except (ValueError, OSError, CacheError, DecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
