"""Axis-aligned box arithmetic, IoU, and class-aware NMS.

Boxes use top-left (x, y) plus width/height, with continuous coordinates.
Boxes are allowed to extend past image bounds; clamping to the sensor frame
is an export-time policy, not a geometry concern.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = ["DetBox", "box_score", "iou", "pairwise_iou", "nms", "clamp_box"]


@dataclass(frozen=True)
class DetBox:
    """One detection or label box.

    ``p_iou`` holds one predicted-IoU score per class; ``class_id`` indexes
    into it. ``t_step`` is the frame (timestep) the box belongs to.
    """

    x: float
    y: float
    w: float
    h: float
    class_id: int
    t_step: int
    p_obj: float
    p_iou: tuple[float, ...]

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidInputError(
                f"degenerate box: w={self.w}, h={self.h} must be positive"
            )
        if not (0.0 <= self.p_obj <= 1.0):
            raise InvalidInputError(f"p_obj={self.p_obj} outside [0, 1]")
        if any(not (0.0 <= v <= 1.0) for v in self.p_iou):
            raise InvalidInputError("p_iou entries must lie in [0, 1]")
        if self.class_id < 0 or self.class_id >= len(self.p_iou):
            raise InvalidInputError(
                f"class_id={self.class_id} out of range for {len(self.p_iou)} classes"
            )
        if self.t_step < 0:
            raise InvalidInputError(f"t_step={self.t_step} must be >= 0")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def moved_to(self, cx: float, cy: float, t_step: int) -> "DetBox":
        """Same box re-centered at (cx, cy) and stamped with a new timestep."""
        return replace(self, x=cx - self.w / 2.0, y=cy - self.h / 2.0, t_step=t_step)


def box_score(box: DetBox) -> float:
    """Ranking score used by NMS: p_obj times the best per-class IoU score."""
    return box.p_obj * max(box.p_iou)


def iou(a: DetBox, b: DetBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    if a.w <= 0 or a.h <= 0 or b.w <= 0 or b.h <= 0:
        raise InvalidInputError("iou requires boxes with positive size")
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def pairwise_iou(boxes_a: Sequence[DetBox], boxes_b: Sequence[DetBox]) -> np.ndarray:
    """(len(a), len(b)) IoU matrix; vectorized for matching loops."""
    if not boxes_a or not boxes_b:
        return np.zeros((len(boxes_a), len(boxes_b)))
    ax = np.array([[b.x, b.y, b.x2, b.y2] for b in boxes_a])
    bx = np.array([[b.x, b.y, b.x2, b.y2] for b in boxes_b])
    ix = np.minimum(ax[:, None, 2], bx[None, :, 2]) - np.maximum(ax[:, None, 0], bx[None, :, 0])
    iy = np.minimum(ax[:, None, 3], bx[None, :, 3]) - np.maximum(ax[:, None, 1], bx[None, :, 1])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    area_a = (ax[:, 2] - ax[:, 0]) * (ax[:, 3] - ax[:, 1])
    area_b = (bx[:, 2] - bx[:, 0]) * (bx[:, 3] - bx[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def nms(boxes: Iterable[DetBox], tau_nms: float, class_aware: bool = True) -> list[DetBox]:
    """Greedy NMS in descending score order, ties broken by input order.

    With ``class_aware`` (default) boxes of different classes never suppress
    each other. All boxes must share one timestep. Output is sorted by
    descending score.
    """
    boxes = list(boxes)
    if not 0.0 < tau_nms < 1.0:
        raise InvalidInputError(f"tau_nms={tau_nms} must lie in (0, 1)")
    if not boxes:
        return []
    steps = {b.t_step for b in boxes}
    if len(steps) > 1:
        raise InvalidInputError(f"nms input spans multiple timesteps: {sorted(steps)}")

    order = sorted(range(len(boxes)), key=lambda i: (-box_score(boxes[i]), i))
    kept: list[DetBox] = []
    for i in order:
        cand = boxes[i]
        suppressed = any(
            (not class_aware or k.class_id == cand.class_id) and iou(k, cand) > tau_nms
            for k in kept
        )
        if not suppressed:
            kept.append(cand)
    return kept


def clamp_box(box: DetBox, width: float, height: float) -> DetBox | None:
    """Intersect a box with the image rectangle; None if nothing remains."""
    x1 = max(box.x, 0.0)
    y1 = max(box.y, 0.0)
    x2 = min(box.x2, float(width))
    y2 = min(box.y2, float(height))
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        return None
    if (x1, y1, x2, y2) == (box.x, box.y, box.x2, box.y2):
        return box
    return replace(box, x=x1, y=y1, w=x2 - x1, h=y2 - y1)
