"""Scoring metrics, cross-validation splits, and error reports.

AUC is computed by the rank statistic with average ranks for ties,
which equals the probability that a random positive outscores a random
negative (ties counting half). The ROC point list is derived
separately for reporting; its trapezoidal area agrees with the rank
statistic to floating-point accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifest import Manifest

__all__ = [
    "SplitSpec",
    "EvalReport",
    "tied_ranks",
    "roc_auc",
    "roc_points",
    "stratified_splits",
    "ensemble_average",
    "classify_errors",
    "evaluate_scores",
]


@dataclass(frozen=True)
class SplitSpec:
    """Cross-validation layout: (train, val, test) fractions and fold count."""

    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    folds: int = 1
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if len(self.ratios) != 3:
            raise ValueError("ratios must be (train, val, test)")
        if any(r < 0 for r in self.ratios):
            raise ValueError(f"ratios must be non-negative: {self.ratios}")
        if self.ratios[0] <= 0 or self.ratios[1] <= 0:
            raise ValueError("train and val fractions must be positive")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {sum(self.ratios)}")
        if self.folds < 1:
            raise ValueError("folds must be at least 1")
        if not self.stratified:
            raise ValueError("only stratified splitting is supported")


@dataclass
class EvalReport:
    """Evaluation summary for one scored set."""

    auc: float
    roc_points: list[tuple[float, float]]
    fp_ids: list[str] = field(default_factory=list)
    fn_ids: list[str] = field(default_factory=list)
    threshold: float = 0.5


def tied_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    sorter = np.argsort(values, kind="mergesort")
    sv = values[sorter]
    starts = np.flatnonzero(np.r_[True, sv[1:] != sv[:-1]])
    counts = np.diff(np.r_[starts, n])
    group_avg = starts + (counts + 1) / 2.0
    ranks = np.empty(n)
    ranks[sorter] = np.repeat(group_avg, counts)
    return ranks


def _validate_scored(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(
            f"scores and labels must be matching 1-D arrays, got "
            f"{scores.shape} and {labels.shape}"
        )
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic."""
    scores, labels = _validate_scored(scores, labels)
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"AUC needs both classes: {n_pos} positive, {n_neg} negative"
        )
    ranks = tied_ranks(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """ROC curve as (FPR, TPR) points from (0, 0) to (1, 1), one point
    per distinct score (tied scores are swept together)."""
    scores, labels = _validate_scored(scores, labels)
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"ROC needs both classes: {n_pos} positive, {n_neg} negative"
        )
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    group_ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    cum_tp = np.cumsum(y == 1)[group_ends]
    cum_fp = np.cumsum(y == 0)[group_ends]
    points = [(0.0, 0.0)]
    points.extend((float(fp) / n_neg, float(tp) / n_pos)
                  for fp, tp in zip(cum_fp, cum_tp))
    return points


def _largest_remainder(n: int, ratios) -> list[int]:
    exact = [n * r for r in ratios]
    base = [int(np.floor(e + 1e-9)) for e in exact]
    leftover = n - sum(base)
    by_remainder = sorted(range(len(ratios)),
                          key=lambda i: (-(exact[i] - base[i]), i))
    for i in by_remainder[:leftover]:
        base[i] += 1
    return base


def stratified_splits(manifest: Manifest,
                      spec: SplitSpec) -> list[tuple[list[str], list[str], list[str]]]:
    """Per-fold (train_ids, val_ids, test_ids), each class partitioned
    independently so every part mirrors the full class balance."""
    if not manifest.is_labeled:
        raise ValueError("splitting requires a fully labeled manifest")
    by_class: dict[int, list[str]] = {}
    for entry in manifest:
        by_class.setdefault(entry.label, []).append(entry.clip_id)

    fold_seqs = np.random.SeedSequence(spec.seed).spawn(spec.folds)
    folds = []
    for seq in fold_seqs:
        rng = np.random.default_rng(seq)
        parts: tuple[list[str], ...] = ([], [], [])
        for label in sorted(by_class):
            ids = list(by_class[label])
            counts = _largest_remainder(len(ids), spec.ratios)
            for part_idx, (count, ratio) in enumerate(zip(counts, spec.ratios)):
                if ratio > 0 and count == 0:
                    part_name = ("train", "val", "test")[part_idx]
                    raise ValueError(
                        f"class {label} has too few samples ({len(ids)}) to "
                        f"give the {part_name} part at least 1"
                    )
            order = rng.permutation(len(ids))
            shuffled = [ids[i] for i in order]
            stops = np.cumsum(counts)
            parts[0].extend(shuffled[: stops[0]])
            parts[1].extend(shuffled[stops[0] : stops[1]])
            parts[2].extend(shuffled[stops[1] : stops[2]])
        folds.append(tuple(parts))
    return folds


def ensemble_average(runs: list[dict[str, float]]) -> dict[str, float]:
    """Arithmetic mean of several per-clip score maps over identical ids."""
    if not runs:
        raise ValueError("no runs to ensemble")
    base = set(runs[0])
    for i, run in enumerate(runs[1:], 1):
        if set(run) != base:
            diff = sorted(base.symmetric_difference(run))
            raise ValueError(f"run {i} covers different clips: {diff}")
    return {cid: sum(run[cid] for run in runs) / len(runs) for cid in runs[0]}


def classify_errors(scores: dict[str, float], labels: dict[str, int],
                    threshold: float = 0.5) -> tuple[list[str], list[str]]:
    """Misclassified ids at the threshold. A score above it predicts
    present; a score at or below it predicts absent."""
    if set(scores) != set(labels):
        diff = sorted(set(scores).symmetric_difference(labels))
        raise ValueError(f"scores and labels cover different clips: {diff}")
    fp = sorted(cid for cid, s in scores.items()
                if labels[cid] == 0 and s > threshold)
    fn = sorted(cid for cid, s in scores.items()
                if labels[cid] == 1 and s <= threshold)
    return fp, fn


def evaluate_scores(scores: dict[str, float], labels: dict[str, int],
                    threshold: float = 0.5) -> EvalReport:
    """Full report for a scored set: AUC, ROC points, and the FP/FN ids
    at the threshold."""
    if set(scores) != set(labels):
        diff = sorted(set(scores).symmetric_difference(labels))
        raise ValueError(f"scores and labels cover different clips: {diff}")
    ids = sorted(scores)
    score_arr = np.array([scores[i] for i in ids])
    label_arr = np.array([labels[i] for i in ids])
    fp, fn = classify_errors(scores, labels, threshold)
    return EvalReport(
        auc=roc_auc(score_arr, label_arr),
        roc_points=roc_points(score_arr, label_arr),
        fp_ids=fp,
        fn_ids=fn,
        threshold=threshold,
    )
