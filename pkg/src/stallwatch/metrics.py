"""ROC/AUC evaluation and the cross-lot experiment driver.

Convention: the positive class is "occupied" (label 1), and a sample is
predicted positive when its score is >= the threshold. FPR is the fraction of
vacant stalls reported occupied; FNR the fraction of occupied stalls reported
vacant.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import detector
from .dataset import DatasetIndex, load_batch, scan_tree, split
from .detector import Hyperparams, ModelSpec
from .errors import ConfigError, ValidationError

log = logging.getLogger(__name__)

CSV_FLOAT = "%.6f"


@dataclass
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


@dataclass
class RocCurve:
    points: list[RocPoint]  # sorted by threshold descending, (0,0) .. (1,1)
    positive_count: int
    negative_count: int


@dataclass
class EvalReport:
    train_lots: list[str]
    test_lots: list[str]
    auc: float
    fpr_at_half: float
    fnr_at_half: float
    positive_count: int
    negative_count: int
    curve: RocCurve | None = field(default=None, repr=False)


@dataclass
class Rates:
    fpr: float
    fnr: float


def _check_scores(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    if not set(np.unique(labels)) <= {0, 1}:
        raise ValidationError("labels must be 0 (vacant) or 1 (occupied)")
    if len(set(labels.tolist())) < 2:
        raise ValidationError("need both labels present to build a ROC curve")
    return scores, labels.astype(np.int64)


def roc(scores, labels) -> RocCurve:
    """ROC points at +inf and every unique score value, threshold descending."""
    scores, labels = _check_scores(scores, labels)
    pos = int(labels.sum())
    neg = int(len(labels) - pos)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last_of_value = np.r_[s[1:] != s[:-1], True]  # cumulative counts at each unique score
    points = [RocPoint(float("inf"), 0.0, 0.0)]
    for i in np.flatnonzero(last_of_value):
        points.append(RocPoint(float(s[i]), tp[i] / pos, fp[i] / neg))
    return RocCurve(points, pos, neg)


def auc(curve_or_scores, labels=None) -> float:
    """Trapezoidal area under the ROC curve."""
    curve = curve_or_scores if isinstance(curve_or_scores, RocCurve) else roc(curve_or_scores, labels)
    fpr = np.array([p.fpr for p in curve.points])
    tpr = np.array([p.tpr for p in curve.points])
    return float(((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0).sum())


def rates_at(scores, labels, threshold: float = 0.5) -> Rates:
    """FPR/FNR with predicted-positive defined as score >= threshold."""
    scores, labels = _check_scores(scores, labels)
    predicted = scores >= threshold
    pos = labels == 1
    fpr = float((predicted & ~pos).sum() / (~pos).sum())
    fnr = float((~predicted & pos).sum() / pos.sum())
    return Rates(fpr, fnr)


@dataclass
class ExperimentPlan:
    train_lots: list[str]
    test_lots: list[str]
    hyperparams: Hyperparams
    spec: ModelSpec
    split_ratio: float = 0.5
    split_seed: int = 0


def _score_index(model, index: DatasetIndex, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    scores = np.empty(len(index.records))
    labels = np.empty(len(index.records), dtype=np.int64)
    for start in range(0, len(index.records), chunk):
        ids = range(start, min(start + chunk, len(index.records)))
        inputs, batch_labels = load_batch(index, list(ids), model)
        scores[ids.start : ids.stop] = detector.score_batch(model, inputs)
        labels[ids.start : ids.stop] = batch_labels
    return scores, labels


def _split_lots(data_root, lots, ratio: float, seed: int) -> dict[str, tuple[DatasetIndex, DatasetIndex]]:
    index = scan_tree(data_root)
    missing = [lot for lot in set(lots) if lot not in index.lots()]
    if missing:
        raise ConfigError(f"lots not present in {data_root}: {sorted(missing)} (have {index.lots()})")
    return {lot: split(index.filter_lots([lot]), ratio, seed) for lot in sorted(set(lots))}


def _reports_for(model, halves, test_lots, train_lots) -> list[EvalReport]:
    reports = []
    for lot in test_lots:
        scores, labels = _score_index(model, halves[lot][1])
        curve = roc(scores, labels)
        rates = rates_at(scores, labels)
        reports.append(
            EvalReport(
                train_lots=list(train_lots),
                test_lots=[lot],
                auc=auc(curve),
                fpr_at_half=rates.fpr,
                fnr_at_half=rates.fnr,
                positive_count=curve.positive_count,
                negative_count=curve.negative_count,
                curve=curve,
            )
        )
    return reports


def run_experiment(plan: ExperimentPlan, data_root) -> list[EvalReport]:
    """Train once on the plan's train lots, evaluate each test lot's held-out half.

    Every lot is split train/test independently (same ratio and seed), so a
    lot used for both training and testing never leaks samples across sides.
    """
    halves = _split_lots(
        data_root, set(plan.train_lots) | set(plan.test_lots), plan.split_ratio, plan.split_seed
    )
    train_index = DatasetIndex([r for lot in plan.train_lots for r in halves[lot][0].records])

    model = detector.build(plan.spec)
    report = detector.fine_tune(model, train_index, plan.hyperparams)
    log.info(
        "trained on %s: %d samples, train accuracy %.4f, %.1fs",
        "+".join(plan.train_lots), len(train_index), report.final_train_accuracy, report.wall_time_s,
    )
    return _reports_for(model, halves, plan.test_lots, plan.train_lots)


def evaluate_lots(
    model, data_root, test_lots, train_lots=("model",), split_ratio: float = 0.5, split_seed: int = 0
) -> list[EvalReport]:
    """Score an already-trained model on each test lot's held-out half."""
    halves = _split_lots(data_root, test_lots, split_ratio, split_seed)
    return _reports_for(model, halves, test_lots, train_lots)


def _pair_name(report: EvalReport) -> tuple[str, str]:
    return "+".join(report.train_lots), "+".join(report.test_lots)


def emit(reports: list[EvalReport], out_dir) -> list[Path]:
    """Write report.csv plus one roc_<train>_<test>.csv per report."""
    if not reports:
        raise ValidationError("no reports to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    report_path = out_dir / "report.csv"
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["train", "test", "auc", "fpr", "fnr", "positives", "negatives"])
        for r in reports:
            train, test = _pair_name(r)
            writer.writerow(
                [train, test, CSV_FLOAT % r.auc, CSV_FLOAT % r.fpr_at_half, CSV_FLOAT % r.fnr_at_half,
                 r.positive_count, r.negative_count]
            )
    written.append(report_path)

    for r in reports:
        if r.curve is None:
            raise ValidationError(f"report {_pair_name(r)} carries no ROC curve")
        train, test = _pair_name(r)
        path = out_dir / f"roc_{train}_{test}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["threshold", "fpr", "tpr"])
            for p in r.curve.points:
                writer.writerow([CSV_FLOAT % p.threshold, CSV_FLOAT % p.fpr, CSV_FLOAT % p.tpr])
        written.append(path)
    return written
