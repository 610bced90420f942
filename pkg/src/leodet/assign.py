"""Anchor-free grid assignment and the masked detection loss.

Anchors are feature-map grid points over multiple strides. KEEP boxes pick
their positive anchors (o=1) from a center-prior candidate set, sized by a
dynamic-k rule when decoded predictions are available. Candidate anchors of
IGNORE boxes become r=1 and are excluded from every loss term, so the model
is neither pushed toward nor away from uncertain regions. The loss and its
analytic gradient are pure functions over flat arrays, which keeps them
finite-difference checkable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import DetBox

__all__ = [
    "AnchorGrid",
    "AnchorPrediction",
    "AnchorAssignment",
    "LossBreakdown",
    "LossGradient",
    "assign",
    "detection_loss",
    "loss_gradient",
]

PROB_EPS = 1e-7


@dataclass(frozen=True)
class AnchorGrid:
    """Multi-level anchor points; level entries are (stride, grid_h, grid_w).

    Anchors enumerate level-major, then row-major, with centers at
    ((col + 0.5) * stride, (row + 0.5) * stride).
    """

    levels: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        if not self.levels:
            raise InvalidInputError("anchor grid has no levels")
        strides = [s for s, _, _ in self.levels]
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise InvalidInputError(f"strides must strictly increase, got {strides}")
        if any(gh < 1 or gw < 1 for _, gh, gw in self.levels):
            raise InvalidInputError("grid dimensions must be >= 1")
        centers = []
        per_anchor_stride = []
        for stride, gh, gw in self.levels:
            ys, xs = np.mgrid[0:gh, 0:gw]
            cx = (xs.ravel() + 0.5) * stride
            cy = (ys.ravel() + 0.5) * stride
            centers.append(np.stack([cx, cy], axis=1))
            per_anchor_stride.append(np.full(gh * gw, float(stride)))
        object.__setattr__(self, "_centers", np.concatenate(centers, axis=0))
        object.__setattr__(self, "_strides", np.concatenate(per_anchor_stride))

    @classmethod
    def from_image(cls, strides: tuple[int, ...], width: int, height: int) -> "AnchorGrid":
        levels = tuple(
            (s, math.ceil(height / s), math.ceil(width / s)) for s in sorted(strides)
        )
        return cls(levels)

    @property
    def num_anchors(self) -> int:
        return len(self._strides)

    @property
    def centers(self) -> np.ndarray:
        return self._centers

    @property
    def strides(self) -> np.ndarray:
        return self._strides


@dataclass
class AnchorPrediction:
    """Raw per-anchor network outputs: p_obj (N,), p_iou (N, C), delta (N, 4)."""

    p_obj: np.ndarray
    p_iou: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        self.p_obj = np.asarray(self.p_obj, dtype=float)
        self.p_iou = np.asarray(self.p_iou, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        n = len(self.p_obj)
        if self.p_iou.shape[0] != n or self.delta.shape != (n, 4):
            raise InvalidInputError("prediction arrays disagree on anchor count")

    @property
    def num_classes(self) -> int:
        return self.p_iou.shape[1]

    def decode(self, grid: AnchorGrid) -> np.ndarray:
        """Decoded boxes (N, 4) as (cx, cy, w, h)."""
        if len(self.p_obj) != grid.num_anchors:
            raise InvalidInputError("prediction length does not match grid")
        s = grid.strides
        cx = grid.centers[:, 0] + self.delta[:, 0] * s
        cy = grid.centers[:, 1] + self.delta[:, 1] * s
        w = np.exp(self.delta[:, 2]) * s
        h = np.exp(self.delta[:, 3]) * s
        return np.stack([cx, cy, w, h], axis=1)


@dataclass
class AnchorAssignment:
    """Per-anchor targets: o/r flags plus matched-box geometry and class."""

    grid: AnchorGrid
    o: np.ndarray                # (N,) uint8, positive anchors
    r: np.ndarray                # (N,) uint8, loss-masked anchors
    matched_box: np.ndarray      # (N, 4) x, y, w, h of the matched KEEP box
    matched_class: np.ndarray    # (N,) int32, -1 where unmatched
    matched_ignore: np.ndarray   # (N,) int32 index into the ignore list, -1 elsewhere
    num_classes: int

    def __post_init__(self):
        if len(self.o) != self.grid.num_anchors:
            raise InvalidInputError("assignment arrays do not match the grid")
        if np.any((self.o == 1) & (self.r == 1)):
            raise InvalidInputError("an anchor cannot be both positive and masked")


def _candidate_mask(
    centers: np.ndarray, strides: np.ndarray, box: DetBox, center_radius: float
) -> np.ndarray:
    inside = (
        (centers[:, 0] >= box.x)
        & (centers[:, 0] <= box.x2)
        & (centers[:, 1] >= box.y)
        & (centers[:, 1] <= box.y2)
    )
    dist = np.hypot(centers[:, 0] - box.cx, centers[:, 1] - box.cy)
    return inside | (dist <= center_radius * strides)


def _iou_xywh_vs_box(decoded: np.ndarray, box: DetBox) -> np.ndarray:
    """IoU of (cx, cy, w, h) rows against one DetBox."""
    x1 = decoded[:, 0] - decoded[:, 2] / 2
    y1 = decoded[:, 1] - decoded[:, 3] / 2
    x2 = decoded[:, 0] + decoded[:, 2] / 2
    y2 = decoded[:, 1] + decoded[:, 3] / 2
    iw = np.clip(np.minimum(x2, box.x2) - np.maximum(x1, box.x), 0, None)
    ih = np.clip(np.minimum(y2, box.y2) - np.maximum(y1, box.y), 0, None)
    inter = iw * ih
    union = decoded[:, 2] * decoded[:, 3] + box.area - inter
    return inter / union


def assign(
    grid: AnchorGrid,
    keep_boxes: list[DetBox],
    ignore_boxes: list[DetBox],
    predictions: AnchorPrediction | None = None,
    center_radius: float = 2.5,
    topk: int = 10,
    num_classes: int | None = None,
    strategy: str = "dynamic_k",
) -> AnchorAssignment:
    """Assign anchors to KEEP boxes (o=1) and mask IGNORE regions (r=1).

    Candidates per box are anchors with their center inside the box or
    within ``center_radius`` strides of its center. With predictions, each
    box takes dynamic-k positives ranked by decoded IoU (k = clamped round
    of the top-10 IoU sum); without, the k nearest candidates by center
    distance. ``strategy="topk"`` forces the distance rule even when
    predictions are supplied. Anchors contested by several boxes go to the
    highest affinity, ties to the smaller box.
    """
    if strategy not in ("dynamic_k", "topk"):
        raise InvalidInputError(f"unknown assignment strategy {strategy!r}")
    n = grid.num_anchors
    centers, strides = grid.centers, grid.strides
    if num_classes is None:
        num_classes = (
            predictions.num_classes
            if predictions is not None
            else max((len(b.p_iou) for b in keep_boxes + ignore_boxes), default=1)
        )
    use_preds = predictions is not None and strategy == "dynamic_k"
    decoded = predictions.decode(grid) if use_preds else None

    # proposals[anchor] -> (affinity, box_area, box_idx)
    proposals: dict[int, list[tuple[float, float, int]]] = {}
    for bi, box in enumerate(keep_boxes):
        cand = np.nonzero(_candidate_mask(centers, strides, box, center_radius))[0]
        if len(cand) == 0:
            continue
        if decoded is not None:
            ious = _iou_xywh_vs_box(decoded[cand], box)
            top = np.sort(ious)[-topk:]
            k = int(np.clip(round(float(top.sum())), 1, len(cand)))
            order = sorted(range(len(cand)), key=lambda i: (-ious[i], cand[i]))
            chosen = [(cand[i], float(ious[i])) for i in order[:k]]
        else:
            dist = np.hypot(centers[cand, 0] - box.cx, centers[cand, 1] - box.cy)
            k = min(len(cand), topk)
            order = sorted(range(len(cand)), key=lambda i: (dist[i], cand[i]))
            chosen = [(cand[i], -float(dist[i])) for i in order[:k]]
        for anchor, affinity in chosen:
            proposals.setdefault(int(anchor), []).append((affinity, box.area, bi))

    o = np.zeros(n, dtype=np.uint8)
    r = np.zeros(n, dtype=np.uint8)
    matched_box = np.zeros((n, 4), dtype=float)
    matched_class = np.full(n, -1, dtype=np.int32)
    matched_ignore = np.full(n, -1, dtype=np.int32)

    for anchor, cands in proposals.items():
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        _, _, bi = cands[0]
        box = keep_boxes[bi]
        o[anchor] = 1
        matched_box[anchor] = (box.x, box.y, box.w, box.h)
        matched_class[anchor] = box.class_id

    for gi, box in enumerate(ignore_boxes):
        cand = np.nonzero(_candidate_mask(centers, strides, box, center_radius))[0]
        for anchor in cand:
            if o[anchor] == 0 and r[anchor] == 0:
                r[anchor] = 1
                matched_ignore[anchor] = gi

    return AnchorAssignment(
        grid=grid,
        o=o,
        r=r,
        matched_box=matched_box,
        matched_class=matched_class,
        matched_ignore=matched_ignore,
        num_classes=num_classes,
    )


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    l_obj: float
    l_cls: float
    l_box: float


@dataclass
class LossGradient:
    d_p_obj: np.ndarray   # (N,)
    d_p_iou: np.ndarray   # (N, C)
    d_delta: np.ndarray   # (N, 4)


def _bce(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return -t * np.log(pc) - (1.0 - t) * np.log(1.0 - pc)


def _bce_grad(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    """d BCE / d p of the clamped loss (zero outside the clamp window)."""
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    g = (pc - t) / (pc * (1.0 - pc))
    return np.where((p > PROB_EPS) & (p < 1.0 - PROB_EPS), g, 0.0)


def _iou_cxcywh_grad(cx, cy, w, h, box: tuple[float, float, float, float]):
    """IoU of one (cx, cy, w, h) box against fixed (x, y, w, h), plus its
    gradient w.r.t. the four moving parameters. Zero gradient when disjoint."""
    bx, by, bw, bh = box
    bx2, by2 = bx + bw, by + bh
    ax1, ax2 = cx - w / 2, cx + w / 2
    ay1, ay2 = cy - h / 2, cy + h / 2
    iw = min(ax2, bx2) - max(ax1, bx)
    ih = min(ay2, by2) - max(ay1, by)
    if iw <= 0 or ih <= 0:
        return 0.0, (0.0, 0.0, 0.0, 0.0)
    inter = iw * ih
    area = w * h
    union = area + bw * bh - inter

    diw_dcx = (1.0 if ax2 < bx2 else 0.0) - (1.0 if ax1 > bx else 0.0)
    diw_dw = 0.5 * ((1.0 if ax2 < bx2 else 0.0) + (1.0 if ax1 > bx else 0.0))
    dih_dcy = (1.0 if ay2 < by2 else 0.0) - (1.0 if ay1 > by else 0.0)
    dih_dh = 0.5 * ((1.0 if ay2 < by2 else 0.0) + (1.0 if ay1 > by else 0.0))

    di = (ih * diw_dcx, iw * dih_dcy, ih * diw_dw, iw * dih_dh)
    da = (0.0, 0.0, h, w)
    grad = tuple((di[k] * (union + inter) - inter * da[k]) / (union * union) for k in range(4))
    return inter / union, grad


def _positive_ious(pred: AnchorPrediction, assignment: AnchorAssignment):
    pos = np.nonzero(assignment.o == 1)[0]
    decoded = pred.decode(assignment.grid)
    ious, grads = [], []
    for i in pos:
        iou_i, g = _iou_cxcywh_grad(*decoded[i], tuple(assignment.matched_box[i]))
        ious.append(iou_i)
        grads.append(g)
    return pos, decoded, np.array(ious), grads


def detection_loss(pred: AnchorPrediction, assignment: AnchorAssignment) -> LossBreakdown:
    """Masked detection loss.

    Objectness BCE averages over anchors with r=0 against the o flag;
    positive anchors additionally pay a per-class BCE whose matched-class
    target is the IoU between the decoded and matched box, plus an IoU box
    loss. Anchors with r=1 contribute to no term.
    """
    if len(pred.p_obj) != assignment.grid.num_anchors:
        raise InvalidInputError("prediction size does not match the assignment grid")
    if int(assignment.matched_class.max(initial=-1)) >= pred.num_classes:
        raise InvalidInputError("matched class id outside the prediction's class range")
    obj_mask = assignment.r == 0
    n_obj = int(obj_mask.sum())
    l_obj = float(_bce(pred.p_obj[obj_mask], assignment.o[obj_mask].astype(float)).mean()) if n_obj else 0.0

    pos, _, ious, _ = _positive_ious(pred, assignment)
    n_pos = len(pos)
    if n_pos:
        targets = np.zeros((n_pos, pred.num_classes))
        targets[np.arange(n_pos), assignment.matched_class[pos]] = ious
        l_cls = float(_bce(pred.p_iou[pos], targets).sum(axis=1).mean())
        l_box = float((1.0 - ious).mean())
    else:
        l_cls = 0.0
        l_box = 0.0
    return LossBreakdown(total=l_obj + l_cls + l_box, l_obj=l_obj, l_cls=l_cls, l_box=l_box)


def loss_gradient(pred: AnchorPrediction, assignment: AnchorAssignment) -> LossGradient:
    """Analytic gradient of :func:`detection_loss` w.r.t. every prediction.

    The class-BCE target depends on the decoded IoU, so box deltas receive
    gradient through both the IoU loss and that target. Masked (r=1)
    anchors get exactly zero gradient in all components.
    """
    n = assignment.grid.num_anchors
    d_p_obj = np.zeros(n)
    d_p_iou = np.zeros((n, pred.num_classes))
    d_delta = np.zeros((n, 4))

    obj_mask = assignment.r == 0
    n_obj = int(obj_mask.sum())
    if n_obj:
        d_p_obj[obj_mask] = _bce_grad(pred.p_obj[obj_mask], assignment.o[obj_mask].astype(float)) / n_obj

    pos, decoded, ious, iou_grads = _positive_ious(pred, assignment)
    n_pos = len(pos)
    if n_pos:
        targets = np.zeros((n_pos, pred.num_classes))
        targets[np.arange(n_pos), assignment.matched_class[pos]] = ious
        d_p_iou[pos] = _bce_grad(pred.p_iou[pos], targets) / n_pos

        for row, i in enumerate(pos):
            cls = assignment.matched_class[i]
            pm = np.clip(pred.p_iou[i, cls], PROB_EPS, 1.0 - PROB_EPS)
            # d l_cls / d target + d l_box / d iou, both mean-scaled
            dl_diou = (np.log((1.0 - pm) / pm) - 1.0) / n_pos
            gcx, gcy, gw, gh = iou_grads[row]
            stride = assignment.grid.strides[i]
            w, h = decoded[i, 2], decoded[i, 3]
            d_delta[i, 0] = dl_diou * gcx * stride
            d_delta[i, 1] = dl_diou * gcy * stride
            d_delta[i, 2] = dl_diou * gw * w
            d_delta[i, 3] = dl_diou * gh * h
    return LossGradient(d_p_obj=d_p_obj, d_p_iou=d_p_iou, d_delta=d_delta)
