"""Shared test helpers: random instance generators and reference oracles.

The oracles deliberately use different algorithmic structure from the
production code (scan-based selection instead of sorting, from-scratch
prefix re-matching instead of cumulative counting) so agreement is
meaningful.
"""

from __future__ import annotations

import numpy as np
import pytest

from leodet.geometry import DetBox, box_score, iou


def random_box(rng: np.random.Generator, num_classes: int = 2, t_step: int = 0,
               width: float = 300.0, height: float = 240.0) -> DetBox:
    w = float(rng.uniform(5, 60))
    h = float(rng.uniform(5, 60))
    p_iou = tuple(float(v) for v in rng.uniform(0.05, 0.99, size=num_classes))
    return DetBox(
        x=float(rng.uniform(-10, width - w + 10)),
        y=float(rng.uniform(-10, height - h + 10)),
        w=w,
        h=h,
        class_id=int(rng.integers(0, num_classes)),
        t_step=t_step,
        p_obj=float(rng.uniform(0.05, 0.99)),
        p_iou=p_iou,
    )


def random_boxes(rng, n, **kwargs) -> list[DetBox]:
    return [random_box(rng, **kwargs) for _ in range(n)]


def reference_nms(boxes: list[DetBox], tau: float, class_aware: bool = True) -> list[DetBox]:
    """Selection-by-scan NMS: no sorting, O(n^2) suppression checks."""
    remaining = list(range(len(boxes)))
    kept: list[int] = []
    while remaining:
        best = remaining[0]
        for i in remaining[1:]:
            if box_score(boxes[i]) > box_score(boxes[best]):
                best = i
        remaining.remove(best)
        clashes = any(
            (not class_aware or boxes[k].class_id == boxes[best].class_id)
            and iou(boxes[k], boxes[best]) > tau
            for k in kept
        )
        if not clashes:
            kept.append(best)
    return [boxes[i] for i in sorted(kept, key=lambda i: (-box_score(boxes[i]), i))]


def reference_greedy_match(
    ious: np.ndarray, classes_a: list[int], classes_b: list[int], tau: float,
    ids_a: list[int] | None = None,
) -> list[tuple[int, int]]:
    """Repeated full-matrix scan for the best remaining pair."""
    ids_a = ids_a if ids_a is not None else list(range(ious.shape[0]))
    free_a = set(range(ious.shape[0]))
    free_b = set(range(ious.shape[1]))
    pairs = []
    while True:
        best = None
        for i in free_a:
            for j in free_b:
                if classes_a[i] != classes_b[j] or ious[i, j] <= tau:
                    continue
                key = (-ious[i, j], ids_a[i], j)
                if best is None or key < best[0]:
                    best = (key, i, j)
        if best is None:
            return sorted(pairs)
        _, i, j = best
        free_a.remove(i)
        free_b.remove(j)
        pairs.append((i, j))


def reference_average_precision(
    preds: list[tuple[float, int, DetBox]],
    gt_frames: dict[int, list[DetBox]],
    gt_ignored: dict[int, list[bool]],
    iou_thr: float,
) -> float:
    """AP via from-scratch re-matching of every score-ordered prefix."""
    preds = sorted(preds, key=lambda p: (-p[0], p[1]))
    n_gt = sum(sum(not ig for ig in flags) for flags in gt_ignored.values())
    if n_gt == 0:
        return float("nan")

    def match_prefix(k: int) -> tuple[int, int]:
        taken = {f: set() for f in gt_frames}
        tp = fp = 0
        for score, frame, box in preds[:k]:
            gts = gt_frames.get(frame, [])
            ign = gt_ignored.get(frame, [])
            best, best_iou, best_ign = -1, -1.0, False
            for want_ign in (False, True):
                if best >= 0:
                    break
                for j, g in enumerate(gts):
                    if j in taken[frame] or ign[j] != want_ign:
                        continue
                    v = iou(box, g)
                    if v >= iou_thr and v > best_iou:
                        best, best_iou, best_ign = j, v, want_ign
            if best < 0:
                fp += 1
            else:
                taken[frame].add(best)
                if not best_ign:
                    tp += 1
        return tp, fp

    points = []
    for k in range(len(preds) + 1):
        tp, fp = match_prefix(k)
        if tp + fp == 0:
            continue
        points.append((tp / n_gt, tp / (tp + fp)))

    ap = 0.0
    for r in np.linspace(0, 1, 101):
        best = 0.0
        for recall, precision in points:
            if recall >= r - 1e-12 and precision > best:
                best = precision
        ap += best
    return ap / 101.0


@pytest.fixture(scope="session")
def scenario_lib():
    from leodet.synth import scenario_library

    return scenario_library()
