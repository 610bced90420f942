"""Detection metrics: pseudo-label precision/recall, mAP, stopping rule.

Pseudo labels are scored against ground truth at a strict IoU threshold
(only KEEP labels count as predictions). mAP follows the COCO regime:
101-point interpolated AP averaged over IoU thresholds 0.50:0.05:0.95 and
over classes, with undersized GT boxes removed ("ignored") so predictions
matching them count as neither hit nor miss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyResultError, InvalidInputError, UndefinedMetricError
from .geometry import DetBox, box_score, pairwise_iou
from .pipeline import Certainty, PseudoLabelSet

__all__ = [
    "EvalFilter",
    "PrPoint",
    "match_boxes",
    "pseudo_label_pr",
    "mean_ap",
    "stopping_decision",
    "COCO_IOU_THRESHOLDS",
]

COCO_IOU_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.96, 0.05), 2))


@dataclass(frozen=True)
class EvalFilter:
    """GT boxes smaller than this are removed from evaluation."""

    min_diagonal: float = 0.0
    min_side: float = 0.0

    def __post_init__(self):
        if self.min_diagonal < 0 or self.min_side < 0:
            raise InvalidInputError("filter sizes must be non-negative")

    def keeps(self, box: DetBox) -> bool:
        diag = float(np.hypot(box.w, box.h))
        return diag >= self.min_diagonal and min(box.w, box.h) >= self.min_side


@dataclass(frozen=True)
class PrPoint:
    class_id: int
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


def match_boxes(
    pred: Sequence[DetBox],
    gt: Sequence[DetBox],
    tau_match: float,
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Greedy one-to-one matching by descending IoU, same class only.

    A pair is eligible when IoU is strictly above ``tau_match``. Returns
    (matches, unmatched_pred_indices, unmatched_gt_indices).
    """
    if not pred or not gt:
        return [], list(range(len(pred))), list(range(len(gt)))
    ious = pairwise_iou(pred, gt)
    cand = [
        (-ious[i, j], i, j)
        for i in range(len(pred))
        for j in range(len(gt))
        if pred[i].class_id == gt[j].class_id and ious[i, j] > tau_match
    ]
    cand.sort()
    used_p: set[int] = set()
    used_g: set[int] = set()
    matches = []
    for _, i, j in cand:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        matches.append((i, j))
    unmatched_p = [i for i in range(len(pred)) if i not in used_p]
    unmatched_g = [j for j in range(len(gt)) if j not in used_g]
    return matches, unmatched_p, unmatched_g


def pseudo_label_pr(
    pseudo: PseudoLabelSet,
    gt_by_step: Mapping[int, Sequence[DetBox]],
    mode: str = "skipped_frames",
    tau_match: float = 0.75,
    labeled_steps: Iterable[int] | None = None,
    num_classes: int | None = None,
) -> dict[int, PrPoint]:
    """Per-class precision/recall of KEEP labels on annotated timesteps.

    ``mode`` picks the participating annotated timesteps: "skipped_frames"
    evaluates on annotated steps outside ``labeled_steps`` (held-out labels),
    "labeled_frames" on the labeled ones. IGNORE and inpainted labels are
    excluded. Empty ratios define as 1 (no predictions means no false
    positives).
    """
    labeled = set(labeled_steps) if labeled_steps is not None else set()
    annotated = set(gt_by_step)
    if mode == "skipped_frames":
        participating = annotated - labeled
    elif mode == "labeled_frames":
        participating = annotated & labeled if labeled else annotated
    else:
        raise InvalidInputError(f"unknown pr mode {mode!r}")
    if not participating:
        raise EmptyResultError(f"no annotated timesteps participate in mode {mode!r}")

    if num_classes is None:
        num_classes = 1
        for boxes in gt_by_step.values():
            for b in boxes:
                num_classes = max(num_classes, b.class_id + 1)
        for pl in pseudo.all_labels():
            num_classes = max(num_classes, pl.box.class_id + 1)

    tp = np.zeros(num_classes, dtype=int)
    fp = np.zeros(num_classes, dtype=int)
    fn = np.zeros(num_classes, dtype=int)
    for t in sorted(participating):
        gt = list(gt_by_step[t])
        keeps = [
            pl.box
            for pl in (pseudo.labels[t] if t < len(pseudo.labels) else [])
            if pl.certainty is Certainty.KEEP and pl.source != "gt"
        ]
        matches, un_p, un_g = match_boxes(keeps, gt, tau_match)
        for i, j in matches:
            tp[gt[j].class_id] += 1
        for i in un_p:
            fp[keeps[i].class_id] += 1
        for j in un_g:
            fn[gt[j].class_id] += 1

    out = {}
    for c in range(num_classes):
        prec = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 1.0
        rec = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] else 1.0
        out[c] = PrPoint(
            class_id=c, precision=float(prec), recall=float(rec),
            tp=int(tp[c]), fp=int(fp[c]), fn=int(fn[c]),
        )
    return out


def _ap_single_class(
    preds: list[tuple[float, int, DetBox]],
    gt_frames: Mapping[int, list[DetBox]],
    gt_ignored: Mapping[int, list[bool]],
    iou_thr: float,
    n_gt: int,
) -> float:
    """101-point interpolated AP for one class at one IoU threshold.

    ``preds`` are (score, frame, box) sorted descending by score. Each
    prediction matches the best still-free GT with IoU >= threshold;
    failing that, a filtered-out GT absorbs it without penalty.
    """
    taken: dict[int, set[int]] = {f: set() for f in gt_frames}
    flags = []  # 1 TP, 0 FP, None ignored
    for score, frame, box in preds:
        gts = gt_frames.get(frame, [])
        ign = gt_ignored.get(frame, [])

        def best_free(want_ignored: bool) -> int:
            best_j, best_iou = -1, -1.0
            for j, g in enumerate(gts):
                if j in taken[frame] or ign[j] != want_ignored:
                    continue
                v = _iou_fast(box, g)
                if v >= iou_thr and v > best_iou:
                    best_j, best_iou = j, v
            return best_j

        j = best_free(False)
        if j >= 0:
            taken[frame].add(j)
            flags.append(1)
            continue
        j = best_free(True)
        if j >= 0:
            taken[frame].add(j)
            flags.append(None)
        else:
            flags.append(0)

    flags = [f for f in flags if f is not None]
    if n_gt == 0:
        return float("nan")
    tp_cum = np.cumsum([f == 1 for f in flags]) if flags else np.array([])
    fp_cum = np.cumsum([f == 0 for f in flags]) if flags else np.array([])
    if len(tp_cum) == 0:
        return 0.0
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    ap = 0.0
    for r in np.linspace(0, 1, 101):
        mask = recall >= r - 1e-12
        ap += float(precision[mask].max()) if mask.any() else 0.0
    return ap / 101.0


def _iou_fast(a: DetBox, b: DetBox) -> float:
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def mean_ap(
    pred_per_frame: Sequence[Sequence[DetBox]],
    gt_per_frame: Sequence[Sequence[DetBox]],
    eval_filter: EvalFilter = EvalFilter(),
    iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
    num_classes: int | None = None,
) -> tuple[dict[int, float], float]:
    """COCO-style per-class AP and their mean.

    GT boxes failing the size filter are ignored: predictions overlapping
    them are dropped from scoring instead of counting as false positives.
    Classes without any surviving GT are excluded from the mean.
    """
    if len(pred_per_frame) != len(gt_per_frame):
        raise InvalidInputError("prediction and GT frame counts differ")
    if not any(len(g) for g in gt_per_frame):
        raise UndefinedMetricError("mAP is undefined without any ground-truth boxes")

    if num_classes is None:
        num_classes = 1
        for frame in list(gt_per_frame) + list(pred_per_frame):
            for b in frame:
                num_classes = max(num_classes, b.class_id + 1)

    per_class: dict[int, float] = {}
    for c in range(num_classes):
        gt_frames = {
            f: [b for b in boxes if b.class_id == c] for f, boxes in enumerate(gt_per_frame)
        }
        gt_ignored = {
            f: [not eval_filter.keeps(b) for b in boxes] for f, boxes in gt_frames.items()
        }
        n_gt = sum(sum(not ig for ig in flags) for flags in gt_ignored.values())
        preds = [
            (box_score(b), f, b)
            for f, boxes in enumerate(pred_per_frame)
            for b in boxes
            if b.class_id == c
        ]
        preds.sort(key=lambda p: (-p[0], p[1]))
        if n_gt == 0:
            per_class[c] = float("nan")
            continue
        aps = [_ap_single_class(preds, gt_frames, gt_ignored, thr, n_gt) for thr in iou_thresholds]
        per_class[c] = float(np.mean(aps))

    valid = [v for v in per_class.values() if not np.isnan(v)]
    if not valid:
        raise UndefinedMetricError("no class has ground truth after filtering")
    return per_class, float(np.mean(valid))


def stopping_decision(precision_per_round: Sequence[float]) -> int:
    """Pick the self-training round to keep (1-based).

    Returns the last round before pseudo-label precision first strictly
    decreases; the final round when precision never drops.
    """
    if not precision_per_round:
        raise InvalidInputError("need at least one round")
    for i in range(1, len(precision_per_round)):
        if precision_per_round[i] < precision_per_round[i - 1]:
            return i
    return len(precision_per_round)
