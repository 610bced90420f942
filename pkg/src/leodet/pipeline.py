"""Pseudo-label forging: filtering, bidirectional tracking, soft tagging.

The forge takes TTA-merged detections per timestep and produces labels
tagged KEEP or IGNORE. A detected box survives as KEEP only if it clears
the per-class hard score threshold, belongs to a long-enough track in at
least one tracking direction, and is not soft-uncertain. Everything else
that cleared the hard filter stays as an IGNORE label (loss-masked during
training rather than treated as background), as do boxes inpainted into
the gaps of long tracks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import InvalidConfigError, InvalidInputError, InvalidThresholdsError
from .geometry import DetBox, clamp_box, iou
from .tracker import TrackerParams, inpaint, run_tracker
from .tta import TtaVariant, tta_merge

__all__ = [
    "Certainty",
    "Provenance",
    "ThresholdConfig",
    "PseudoLabel",
    "PseudoLabelSet",
    "derive_thresholds",
    "hard_filter",
    "soft_uncertain",
    "forge",
    "run_round",
]

# soft threshold sits this far above the hard threshold
CAR_SOFT_MARGIN = 0.1
OTHER_SOFT_MARGIN = 0.05


class Certainty(str, Enum):
    KEEP = "keep"
    IGNORE = "ignore"


class Provenance(str, Enum):
    DETECTED = "detected"
    INPAINTED = "inpainted"


@dataclass(frozen=True)
class ThresholdConfig:
    """Per-class hard/soft score thresholds plus the minimum track length."""

    tau_hard: tuple[float, ...]
    tau_soft: tuple[float, ...]
    t_trk: int = 6

    def __post_init__(self):
        if len(self.tau_hard) != len(self.tau_soft) or not self.tau_hard:
            raise InvalidConfigError("tau_hard and tau_soft must cover the same classes")
        for c, (hard, soft) in enumerate(zip(self.tau_hard, self.tau_soft)):
            if not (0.0 < hard < 1.0) or not (0.0 < soft < 1.0):
                raise InvalidConfigError(
                    f"class {c}: thresholds ({hard}, {soft}) must lie in (0, 1)"
                )
            if soft < hard:
                raise InvalidThresholdsError(
                    f"class {c}: tau_soft={soft} below tau_hard={hard}"
                )
        if self.t_trk < 1:
            raise InvalidConfigError("t_trk must be >= 1")


def derive_thresholds(
    tau_hard_car: float,
    dataset_classes: Sequence[str],
    overrides: Mapping[str, float] | None = None,
    t_trk: int = 6,
    soft_overrides: Mapping[str, float] | None = None,
) -> ThresholdConfig:
    """Derive all per-class thresholds from the car hard threshold.

    Cars use (tau, tau + 0.1); every other class halves the car value and
    adds 0.05 for the soft threshold. ``overrides`` replaces a class's hard
    threshold, with its soft threshold re-derived by the class rule;
    ``soft_overrides`` then pins the soft threshold directly (validation
    still requires soft >= hard).
    """
    if not (0.0 < tau_hard_car < 1.0):
        raise InvalidConfigError(f"tau_hard_car={tau_hard_car} must lie in (0, 1)")
    overrides = dict(overrides or {})
    soft_overrides = dict(soft_overrides or {})
    unknown = (set(overrides) | set(soft_overrides)) - set(dataset_classes)
    if unknown:
        raise InvalidConfigError(f"threshold overrides for unknown classes: {sorted(unknown)}")

    hard, soft = [], []
    for name in dataset_classes:
        is_car = name == "car"
        h = tau_hard_car if is_car else tau_hard_car / 2.0
        h = overrides.get(name, h)
        s = soft_overrides.get(name, h + (CAR_SOFT_MARGIN if is_car else OTHER_SOFT_MARGIN))
        if s >= 1.0:
            raise InvalidConfigError(f"class {name}: derived tau_soft={s} >= 1")
        hard.append(h)
        soft.append(s)
    return ThresholdConfig(tau_hard=tuple(hard), tau_soft=tuple(soft), t_trk=t_trk)


@dataclass(frozen=True)
class PseudoLabel:
    box: DetBox
    certainty: Certainty
    provenance: Provenance
    track_len_fwd: int = 0
    track_len_bwd: int = 0
    source: str = "pseudo"

    def __post_init__(self):
        if self.provenance is Provenance.INPAINTED and self.certainty is not Certainty.IGNORE:
            raise InvalidInputError("inpainted labels must be IGNORE")


@dataclass
class PseudoLabelSet:
    sequence_id: str
    labels: list[list[PseudoLabel]]
    round_index: int = 1
    config_digest: str = ""

    def all_labels(self) -> list[PseudoLabel]:
        return [pl for row in self.labels for pl in row]

    def keep_labels(self) -> list[PseudoLabel]:
        return [pl for pl in self.all_labels() if pl.certainty is Certainty.KEEP]


def hard_filter(boxes: Iterable[DetBox], cfg: ThresholdConfig) -> list[DetBox]:
    """Keep boxes whose p_obj AND best p_iou clear the class hard threshold."""
    out = []
    for b in boxes:
        tau = cfg.tau_hard[b.class_id]
        if b.p_obj >= tau and max(b.p_iou) >= tau:
            out.append(b)
    return out


def soft_uncertain(box: DetBox, cfg: ThresholdConfig, rule: str = "and") -> bool:
    """True when the box's scores fall below the class soft threshold.

    ``rule`` selects whether both scores must be below ("and", default)
    or either one suffices ("or").
    """
    tau = cfg.tau_soft[box.class_id]
    below_obj = box.p_obj < tau
    below_iou = max(box.p_iou) < tau
    if rule == "and":
        return below_obj and below_iou
    if rule == "or":
        return below_obj or below_iou
    raise InvalidConfigError(f"unknown soft rule {rule!r}")


def _dedup_inpainted(
    candidates: list[DetBox],
    existing_by_step: list[list[DetBox]],
    num_steps: int,
    tau_nms: float,
    class_aware: bool,
) -> list[list[int]]:
    """Indices of inpaint candidates that survive NMS against existing labels."""
    taken: list[list[DetBox]] = [list(row) for row in existing_by_step]
    kept: list[list[int]] = [[] for _ in range(num_steps)]
    for idx, box in enumerate(candidates):
        t = box.t_step
        clash = any(
            (not class_aware or other.class_id == box.class_id) and iou(other, box) > tau_nms
            for other in taken[t]
        )
        if not clash:
            taken[t].append(box)
            kept[t].append(idx)
    return kept


def forge(
    frames: Sequence[Sequence[DetBox]],
    cfg: ThresholdConfig,
    tracker_params: TrackerParams | None = None,
    *,
    sequence_id: str = "",
    tau_nms: float = 0.45,
    class_aware: bool = True,
    soft_rule: str = "and",
    bidirectional: bool = True,
    with_inpainting: bool = True,
) -> PseudoLabelSet:
    """Turn TTA-merged detections into KEEP/IGNORE pseudo labels.

    Stages: per-class hard filtering; tracking forward and over the
    time-reversed frame list; boxes with short tracks in both directions
    become IGNORE; long tracks get IGNORE inpainted boxes at their gaps;
    surviving boxes below the soft threshold become IGNORE; the rest KEEP.
    ``bidirectional=False`` drops the reverse pass (boxes then need a long
    forward track), kept for ablations.
    """
    tracker_params = tracker_params or TrackerParams()
    num_steps = len(frames)
    filtered = [hard_filter(row, cfg) for row in frames]

    fwd_rows, fwd_tracks = run_tracker(filtered, tracker_params)
    rev_rows, rev_tracks = run_tracker(filtered[::-1], tracker_params)

    labels: list[list[PseudoLabel]] = [[] for _ in range(num_steps)]
    detected_boxes: list[list[DetBox]] = [[] for _ in range(num_steps)]
    for t in range(num_steps):
        for i, box in enumerate(filtered[t]):
            len_f = fwd_rows[t][i].track_len
            len_b = rev_rows[num_steps - 1 - t][i].track_len
            long_enough = len_f >= cfg.t_trk or (bidirectional and len_b >= cfg.t_trk)
            if not long_enough:
                cert = Certainty.IGNORE
            elif soft_uncertain(box, cfg, soft_rule):
                cert = Certainty.IGNORE
            else:
                cert = Certainty.KEEP
            labels[t].append(
                PseudoLabel(
                    box=box,
                    certainty=cert,
                    provenance=Provenance.DETECTED,
                    track_len_fwd=len_f,
                    track_len_bwd=len_b,
                )
            )
            detected_boxes[t].append(box)

    if with_inpainting:
        candidates: list[tuple[DetBox, int, int]] = []  # box, len_f, len_b
        for tb in inpaint(fwd_tracks, cfg.t_trk):
            candidates.append((tb.box, tb.track_len, 0))
        for tb in inpaint(rev_tracks, cfg.t_trk):
            # reverse-pass timesteps live on the flipped timeline
            box = replace(tb.box, t_step=num_steps - 1 - tb.box.t_step)
            candidates.append((box, 0, tb.track_len))
        kept = _dedup_inpainted(
            [c[0] for c in candidates], detected_boxes, num_steps, tau_nms, class_aware
        )
        for t in range(num_steps):
            for idx in kept[t]:
                box, len_f, len_b = candidates[idx]
                labels[t].append(
                    PseudoLabel(
                        box=box,
                        certainty=Certainty.IGNORE,
                        provenance=Provenance.INPAINTED,
                        track_len_fwd=len_f,
                        track_len_bwd=len_b,
                    )
                )

    return PseudoLabelSet(sequence_id=sequence_id, labels=labels)


def _merge_gt(
    labels: list[list[PseudoLabel]],
    gt_by_step: Mapping[int, Sequence[DetBox]],
    labeled_steps: Iterable[int],
    tau_nms: float,
    class_aware: bool,
) -> None:
    """Insert GT as KEEP labels, dropping pseudo boxes they overlap."""
    for t in labeled_steps:
        gt_boxes = list(gt_by_step.get(t, []))
        if not gt_boxes:
            continue
        survivors = [
            pl
            for pl in labels[t]
            if not any(
                (not class_aware or g.class_id == pl.box.class_id)
                and iou(g, pl.box) > tau_nms
                for g in gt_boxes
            )
        ]
        gt_labels = [
            PseudoLabel(
                box=replace(g, t_step=t),
                certainty=Certainty.KEEP,
                provenance=Provenance.DETECTED,
                source="gt",
            )
            for g in gt_boxes
        ]
        labels[t] = gt_labels + survivors


def run_round(
    detections_per_sequence: Mapping[str, Sequence[tuple[TtaVariant, Sequence[DetBox]]]],
    cfg: ThresholdConfig,
    tracker_params: TrackerParams | None = None,
    round_index: int = 1,
    *,
    gt_per_sequence: Mapping[str, Mapping[int, Sequence[DetBox]]] | None = None,
    labeled_steps: Mapping[str, Iterable[int]] | None = None,
    tau_nms: float = 0.45,
    class_aware: bool = True,
    soft_rule: str = "and",
    with_inpainting: bool = True,
    image_size: tuple[int, int] | None = None,
    config_digest: str = "",
) -> dict[str, PseudoLabelSet]:
    """TTA-merge and forge every sequence, then overlay ground truth.

    GT boxes at labeled timesteps enter as KEEP labels and override
    overlapping pseudo boxes. Labels are clamped to the image at this
    export boundary when ``image_size`` is given.
    """
    if round_index < 1:
        raise InvalidInputError("round_index must be >= 1")
    out: dict[str, PseudoLabelSet] = {}
    for seq_id in sorted(detections_per_sequence):
        variants = detections_per_sequence[seq_id]
        frames = tta_merge(variants, tau_nms, class_aware=class_aware)
        pls = forge(
            frames,
            cfg,
            tracker_params,
            sequence_id=seq_id,
            tau_nms=tau_nms,
            class_aware=class_aware,
            soft_rule=soft_rule,
            with_inpainting=with_inpainting,
        )
        if gt_per_sequence and seq_id in gt_per_sequence:
            gt_by_step = gt_per_sequence[seq_id]
            bad = [t for t in gt_by_step if t < 0 or t >= len(frames)]
            if bad:
                raise InvalidInputError(
                    f"sequence {seq_id}: GT timesteps {sorted(bad)} outside 0..{len(frames) - 1}"
                )
            steps = (
                sorted(labeled_steps[seq_id])
                if labeled_steps and seq_id in labeled_steps
                else sorted(gt_by_step)
            )
            _merge_gt(pls.labels, gt_by_step, steps, tau_nms, class_aware)
        if image_size is not None:
            w, h = image_size
            pls.labels = [
                [
                    replace(pl, box=clamped)
                    for pl in row
                    if (clamped := clamp_box(pl.box, w, h)) is not None
                ]
                for row in pls.labels
            ]
        pls.round_index = round_index
        pls.config_digest = config_digest
        out[seq_id] = pls
    return out
