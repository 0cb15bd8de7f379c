"""Detection scoring: IoU matching, the accuracy rule, and diagnostics.

A ground truth counts as correct when it is matched (IoU-greedy) to a
prediction carrying the same label at confidence >= 0.8. Unmatched
predictions never reduce accuracy; the confusion report surfaces them so
that limitation stays visible.
"""

from __future__ import annotations

from dataclasses import dataclass
import json

from .detection import BoundingBox, ClassLabel, Detection, GroundTruth, record_to_detections

ALL_LABELS = tuple(ClassLabel)


@dataclass(frozen=True)
class EvalConfig:
    confidence_floor: float = 0.8
    iou_threshold: float = 0.5

    def __post_init__(self):
        for name in ("confidence_floor", "iou_threshold"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1]; got {v}")


@dataclass(frozen=True)
class MatchResult:
    """Greedy one-to-one matching between predictions and ground truths."""

    pairs: tuple[tuple[int, int, float], ...]  # (pred index, gt index, iou)
    unmatched_predictions: tuple[int, ...]
    unmatched_ground_truths: tuple[int, ...]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union; 0 for disjoint boxes."""
    w = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    h = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    return inter / (a.area + b.area - inter)


def match_detections(
    preds: list[Detection], gts: list[GroundTruth], cfg: EvalConfig | None = None
) -> MatchResult:
    """Greedy best-first matching.

    Predictions in descending confidence each take the still-unmatched ground
    truth with the highest IoU at or above the threshold (ties toward the
    lower GT index). Labels are not compared here; label correctness is
    scored by accuracy() and confusion_matrix().
    """
    cfg = cfg or EvalConfig()
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    taken: set[int] = set()
    pairs = []
    for pi in order:
        best_gi = None
        best_iou = 0.0
        for gi, gt in enumerate(gts):
            if gi in taken:
                continue
            overlap = iou(preds[pi].box, gt.box)
            if overlap >= cfg.iou_threshold and overlap > best_iou:
                best_gi, best_iou = gi, overlap
        if best_gi is not None:
            taken.add(best_gi)
            pairs.append((pi, best_gi, best_iou))
    matched_preds = {p for p, _, _ in pairs}
    return MatchResult(
        pairs=tuple(sorted(pairs)),
        unmatched_predictions=tuple(i for i in range(len(preds)) if i not in matched_preds),
        unmatched_ground_truths=tuple(i for i in range(len(gts)) if i not in taken),
    )


def _count_correct(
    result: MatchResult, preds: list[Detection], gts: list[GroundTruth], cfg: EvalConfig
) -> int:
    correct = 0
    for pi, gi, _ in result.pairs:
        pred = preds[pi]
        if pred.label is gts[gi].label and pred.confidence >= cfg.confidence_floor:
            correct += 1
    return correct


def accuracy(
    result: MatchResult,
    preds: list[Detection],
    gts: list[GroundTruth],
    cfg: EvalConfig | None = None,
) -> float:
    """Fraction of ground truths predicted with the true label at >= the floor.

    Defined as 1.0 on an empty ground-truth set.
    """
    cfg = cfg or EvalConfig()
    if not gts:
        return 1.0
    return _count_correct(result, preds, gts, cfg) / len(gts)


def confusion_matrix(
    result: MatchResult, preds: list[Detection], gts: list[GroundTruth]
) -> dict:
    """Rows are GT labels, columns the matched prediction's label.

    Unmatched ground truths and predictions are tallied separately, so each
    row sum plus its unmatched count equals that label's GT total.
    """
    index = {label: i for i, label in enumerate(ALL_LABELS)}
    matrix = [[0] * len(ALL_LABELS) for _ in ALL_LABELS]
    unmatched_gt = {label.value: 0 for label in ALL_LABELS}
    unmatched_pred = {label.value: 0 for label in ALL_LABELS}
    for pi, gi, _ in result.pairs:
        matrix[index[gts[gi].label]][index[preds[pi].label]] += 1
    for gi in result.unmatched_ground_truths:
        unmatched_gt[gts[gi].label.value] += 1
    for pi in result.unmatched_predictions:
        unmatched_pred[preds[pi].label.value] += 1
    return {
        "labels": [label.value for label in ALL_LABELS],
        "matrix": matrix,
        "unmatched_ground_truths": unmatched_gt,
        "unmatched_predictions": unmatched_pred,
    }


# --- file-level evaluation ----------------------------------------------------


def load_predictions(path) -> dict[str, list[Detection]]:
    """Predictions JSONL keyed by image filename.

    Each line is {"image": name, "detections": [{"label", "box", "conf"}]}.
    """
    out: dict[str, list[Detection]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            dets = record_to_detections({"frame": 0, "detections": record["detections"]})
            out[record["image"]] = list(dets.detections)
    return out


def evaluate_dataset(
    predictions: dict[str, list[Detection]],
    ground_truths: dict[str, list[GroundTruth]],
    cfg: EvalConfig | None = None,
) -> dict:
    """Score predictions against ground truth image by image.

    Per-image correct/total counts reduce by summation; the report carries
    the overall accuracy, per-image rows, and the aggregate confusion matrix.
    """
    cfg = cfg or EvalConfig()
    total_gts = 0
    total_correct = 0
    rows = []
    agg_pairs: list[tuple[int, int, float]] = []
    all_preds: list[Detection] = []
    all_gts: list[GroundTruth] = []
    agg_unmatched_pred: list[int] = []
    agg_unmatched_gt: list[int] = []

    for image in sorted(ground_truths):
        preds = predictions.get(image, [])
        gts = ground_truths[image]
        result = match_detections(preds, gts, cfg)
        acc = accuracy(result, preds, gts, cfg)
        correct = _count_correct(result, preds, gts, cfg)
        total_gts += len(gts)
        total_correct += correct
        rows.append(
            {
                "image": image,
                "ground_truths": len(gts),
                "predictions": len(preds),
                "correct": correct,
                "accuracy": acc,
            }
        )
        p_off = len(all_preds)
        g_off = len(all_gts)
        agg_pairs.extend((pi + p_off, gi + g_off, ov) for pi, gi, ov in result.pairs)
        agg_unmatched_pred.extend(pi + p_off for pi in result.unmatched_predictions)
        agg_unmatched_gt.extend(gi + g_off for gi in result.unmatched_ground_truths)
        all_preds.extend(preds)
        all_gts.extend(gts)

    overall = total_correct / total_gts if total_gts else 1.0
    combined = MatchResult(
        pairs=tuple(agg_pairs),
        unmatched_predictions=tuple(agg_unmatched_pred),
        unmatched_ground_truths=tuple(agg_unmatched_gt),
    )
    return {
        "accuracy": overall,
        "ground_truths": total_gts,
        "correct": total_correct,
        "confidence_floor": cfg.confidence_floor,
        "iou_threshold": cfg.iou_threshold,
        "images": rows,
        "confusion": confusion_matrix(combined, all_preds, all_gts),
    }


def format_report(report: dict) -> str:
    """Aligned-column text rendering of evaluate_dataset output."""
    lines = []
    header = f"{'image':<28} {'gts':>5} {'preds':>6} {'correct':>8} {'accuracy':>9}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in report["images"]:
        lines.append(
            f"{row['image']:<28} {row['ground_truths']:>5} {row['predictions']:>6}"
            f" {row['correct']:>8} {row['accuracy']:>9.3f}"
        )
    lines.append("-" * len(header))
    lines.append(
        f"{'overall':<28} {report['ground_truths']:>5} {'':>6}"
        f" {report['correct']:>8} {report['accuracy']:>9.3f}"
    )
    labels = report["confusion"]["labels"]
    width = max(len(l) for l in labels) + 2
    lines.append("")
    lines.append("confusion (rows = ground truth, cols = prediction):")
    lines.append(" " * width + "".join(f"{l:>{width}}" for l in labels) + f"{'missed':>{width}}")
    for label, row in zip(labels, report["confusion"]["matrix"]):
        missed = report["confusion"]["unmatched_ground_truths"][label]
        lines.append(
            f"{label:>{width}}" + "".join(f"{v:>{width}}" for v in row) + f"{missed:>{width}}"
        )
    extras = report["confusion"]["unmatched_predictions"]
    lines.append(
        f"{'spurious':>{width}}"
        + "".join(f"{extras[l]:>{width}}" for l in labels)
        + f"{'':>{width}}"
    )
    return "\n".join(lines)
