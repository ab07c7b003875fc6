"""Evaluation harness: slice-wise detection metrics, ROC AUC, segmentation
Dice/IoU with standard errors, paired t-tests against baselines, and
patient-wise recall.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetIndex
from .stats import StatsError, mean_stderr, paired_ttest, roc_auc

MIN_SEG_PIXELS = 10


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise MetricsError(f"negative confusion counts: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _ratio(num: int, den: int, flags: dict, name: str) -> float:
    if den == 0:
        flags[name] = "undefined (zero denominator), reported as 0"
        return 0.0
    return num / den


def detection_metrics(counts: ConfusionCounts) -> dict:
    """Accuracy, precision, recall, F1, specificity from confusion counts.

    Undefined ratios (empty denominators) are reported as 0 and listed under
    the "flags" key.
    """
    flags: dict = {}
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    precision = _ratio(tp, tp + fp, flags, "precision")
    recall = _ratio(tp, tp + fn, flags, "recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        flags["f1"] = "undefined (precision + recall = 0), reported as 0"
        f1 = 0.0
    return {
        "accuracy": _ratio(tp + tn, counts.total, flags, "accuracy"),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "specificity": _ratio(tn, tn + fp, flags, "specificity"),
        "flags": flags,
    }


def seg_detection_rule(mask: np.ndarray, min_pixels: int = MIN_SEG_PIXELS) -> bool:
    """Mask-based slice detection: positive iff strictly more than
    min_pixels segmented pixels."""
    return int(np.asarray(mask, dtype=bool).sum()) > min_pixels


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Dice coefficient 2|A∩B|/(|A|+|B|); both-empty convention: 1.0.

    Both-empty pairs are excluded from lesion-slice averages by the
    evaluation harness, which only averages over ground-truth ICH slices.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise MetricsError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union |A∩B|/|A∪B|; both-empty convention: 1.0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise MetricsError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def patient_recall(index: DatasetIndex, gt_positive: dict, predicted_positive: dict) -> float:
    """Patient-wise recall: a positive patient counts as detected when at
    least one of its ground-truth ICH slices is predicted positive."""
    detected = 0
    positive_patients = 0
    for patient, records in index.by_patient().items():
        ich_slices = [r.slice_id for r in records if gt_positive.get(r.slice_id)]
        if not ich_slices:
            continue
        positive_patients += 1
        if any(predicted_positive.get(s) for s in ich_slices):
            detected += 1
    if positive_patients == 0:
        raise MetricsError("no ground-truth positive patients in the index")
    return detected / positive_patients


@dataclass(frozen=True)
class SlicePrediction:
    slice_id: str
    score: float
    positive: bool
    mask: np.ndarray | None = None


@dataclass
class EvaluationReport:
    detection: dict = field(default_factory=dict)
    auc: float | None = None
    dice_mean: float | None = None
    dice_stderr: float | None = None
    iou_mean: float | None = None
    iou_stderr: float | None = None
    patient_recall: float | None = None
    n_slices: int = 0
    n_lesion_slices: int = 0
    per_slice: list[dict] = field(default_factory=list)
    ttests: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "detection": self.detection,
            "auc": self.auc,
            "segmentation": {
                "dice_mean": self.dice_mean,
                "dice_stderr": self.dice_stderr,
                "iou_mean": self.iou_mean,
                "iou_stderr": self.iou_stderr,
                "n_lesion_slices": self.n_lesion_slices,
            },
            "patient_recall": self.patient_recall,
            "n_slices": self.n_slices,
            "per_slice": self.per_slice,
            "ttests": self.ttests,
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self, method_name: str = "this run") -> str:
        """Aligned-column text summary in the detection/segmentation table layout."""
        lines = []
        if self.detection:
            lines.append("Detection performance")
            lines.append(f"{'Metric':<14}{method_name}")
            for key in ("accuracy", "precision", "recall", "f1", "specificity"):
                lines.append(f"{key.capitalize():<14}{self.detection[key]:.3f}")
            if self.auc is not None:
                lines.append(f"{'AUC':<14}{self.auc:.3f}")
        if self.dice_mean is not None:
            lines.append("")
            lines.append("Segmentation performance (mean ± standard error)")
            lines.append(f"{'Model':<18}{'Dice':<18}IoU")
            dice_se = f"{self.dice_stderr:.3f}" if self.dice_stderr is not None else "n/a"
            iou_se = f"{self.iou_stderr:.3f}" if self.iou_stderr is not None else "n/a"
            lines.append(
                f"{method_name:<18}{self.dice_mean:.3f} ± {dice_se:<10}"
                f"{self.iou_mean:.3f} ± {iou_se}"
            )
        if self.patient_recall is not None:
            lines.append("")
            lines.append(f"Patient-wise recall: {self.patient_recall:.4f}")
        for name, block in sorted(self.ttests.items()):
            lines.append(
                f"t-test vs {name} (n={block['n']}): "
                f"Dice t={block['dice']['t']:.3f} p={block['dice']['p']:.4g}; "
                f"IoU t={block['iou']['t']:.3f} p={block['iou']['p']:.4g}"
            )
        return "\n".join(lines) + "\n"


def write_per_slice_csv(report: EvaluationReport, path):
    """Per-slice score CSV: the t-test interchange format (slice_id,dice,iou)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slice_id", "dice", "iou"])
        for row in report.per_slice:
            if row.get("dice") is not None:
                writer.writerow([row["slice_id"], repr(row["dice"]), repr(row["iou"])])


def read_per_slice_csv(path) -> dict:
    """Read a baseline per-slice score CSV into {slice_id: {"dice", "iou"}}."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != [
            "slice_id", "dice", "iou",
        ]:
            raise MetricsError(f"{path}: header must be slice_id,dice,iou")
        for row in reader:
            out[row["slice_id"].strip()] = {
                "dice": float(row["dice"]),
                "iou": float(row["iou"]),
            }
    return out


def evaluate_run(index: DatasetIndex, predictions: dict, gt_masks: dict,
                 detection_rule: str = "detector", min_pixels: int = MIN_SEG_PIXELS,
                 baselines: dict | None = None) -> EvaluationReport:
    """Assemble the full evaluation report.

    predictions: {slice_id: SlicePrediction}; gt_masks: {slice_id: bool array
    or None}. Ground truth for a slice is positive when it has annotation
    boxes or a nonzero mask. detection_rule "detector" uses the detector's
    slice decision, "mask" applies the >min_pixels rule to predicted masks.
    Segmentation averages run over ground-truth ICH slices that carry a
    mask; a missing prediction there scores 0.
    """
    report = EvaluationReport()
    covered = [r for r in index if r.slice_id in predictions]
    missing = [r.slice_id for r in index if r.slice_id not in predictions]
    if missing:
        report.warnings.append(
            f"{len(missing)} slice(s) lack predictions and are excluded from "
            f"detection metrics: {', '.join(missing[:5])}"
            + ("..." if len(missing) > 5 else "")
        )
    if not covered:
        report.warnings.append("no predictions cover the index; report is empty")
        return report

    gt_positive = {}
    for rec in index:
        gt_mask = gt_masks.get(rec.slice_id)
        gt_positive[rec.slice_id] = bool(rec.boxes) or (
            gt_mask is not None and bool(np.asarray(gt_mask).any())
        )

    tp = fp = tn = fn = 0
    scores, labels = [], []
    pred_positive = {}
    for rec in covered:
        pred = predictions[rec.slice_id]
        if detection_rule == "detector":
            decided = pred.positive
        elif detection_rule == "mask":
            decided = pred.mask is not None and seg_detection_rule(pred.mask, min_pixels)
        else:
            raise MetricsError(f"unknown detection rule {detection_rule!r}")
        pred_positive[rec.slice_id] = decided
        truth = gt_positive[rec.slice_id]
        if truth and decided:
            tp += 1
        elif truth:
            fn += 1
        elif decided:
            fp += 1
        else:
            tn += 1
        scores.append(pred.score)
        labels.append(truth)
    counts = ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)
    report.detection = detection_metrics(counts)
    report.detection["counts"] = {"tp": tp, "fp": fp, "tn": tn, "fn": fn}
    report.n_slices = len(covered)

    try:
        report.auc = roc_auc(np.array(scores), np.array(labels))
    except StatsError as exc:
        report.warnings.append(f"AUC unavailable: {exc}")

    dice_vals, iou_vals = [], []
    per_slice_dice = {}
    for rec in covered:
        gt_mask = gt_masks.get(rec.slice_id)
        entry = {"slice_id": rec.slice_id, "gt_positive": gt_positive[rec.slice_id],
                 "predicted_positive": pred_positive[rec.slice_id],
                 "score": predictions[rec.slice_id].score,
                 "dice": None, "iou": None}
        if gt_mask is not None and np.asarray(gt_mask).any():
            pred_mask = predictions[rec.slice_id].mask
            if pred_mask is None:
                pred_mask = np.zeros_like(np.asarray(gt_mask, dtype=bool))
            entry["dice"] = dice(pred_mask, gt_mask)
            entry["iou"] = iou(pred_mask, gt_mask)
            dice_vals.append(entry["dice"])
            iou_vals.append(entry["iou"])
            per_slice_dice[rec.slice_id] = (entry["dice"], entry["iou"])
        report.per_slice.append(entry)
    report.n_lesion_slices = len(dice_vals)
    if dice_vals:
        report.dice_mean, report.dice_stderr = mean_stderr(dice_vals)
        report.iou_mean, report.iou_stderr = mean_stderr(iou_vals)

    try:
        report.patient_recall = patient_recall(index, gt_positive, pred_positive)
    except MetricsError as exc:
        report.warnings.append(f"patient recall unavailable: {exc}")

    for name, table in (baselines or {}).items():
        shared = sorted(set(per_slice_dice) & set(table))
        if len(shared) < 2:
            report.warnings.append(
                f"baseline {name!r}: fewer than 2 aligned lesion slices, t-test skipped"
            )
            continue
        ours_d = [per_slice_dice[s][0] for s in shared]
        ours_i = [per_slice_dice[s][1] for s in shared]
        theirs_d = [table[s]["dice"] for s in shared]
        theirs_i = [table[s]["iou"] for s in shared]
        td = paired_ttest(ours_d, theirs_d)
        ti = paired_ttest(ours_i, theirs_i)
        report.ttests[name] = {
            "n": len(shared),
            "dice": {"t": td.t, "p": td.p, "degenerate": td.degenerate},
            "iou": {"t": ti.t, "p": ti.p, "degenerate": ti.degenerate},
        }
    return report
