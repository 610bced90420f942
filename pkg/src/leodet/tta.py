"""Test-time-augmentation merge for detector outputs.

Boxes predicted on time-flipped or mirrored event streams are mapped back
into the original frame, grouped by timestep, and ensembled with NMS.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from .errors import InvalidInputError
from .geometry import DetBox, nms

__all__ = ["TtaVariant", "unflip_boxes", "tta_merge"]


@dataclass(frozen=True)
class TtaVariant:
    """Which flips were applied to the stream a detector run saw."""

    time_flipped: bool
    h_flipped: bool
    num_timesteps: int
    width: int

    def __post_init__(self):
        if self.num_timesteps < 1:
            raise InvalidInputError("num_timesteps must be >= 1")

    @property
    def key(self) -> str:
        return {
            (False, False): "identity",
            (True, False): "tflip",
            (False, True): "hflip",
            (True, True): "thflip",
        }[(self.time_flipped, self.h_flipped)]


def unflip_boxes(boxes: Sequence[DetBox], variant: TtaVariant) -> list[DetBox]:
    """Map boxes from a flipped run back into the original frame.

    Time flip remaps the timestep, horizontal flip mirrors x; sizes, scores
    and classes are untouched. Involutive per variant.
    """
    out = []
    for b in boxes:
        if b.t_step >= variant.num_timesteps:
            raise InvalidInputError(
                f"box t_step={b.t_step} outside sequence length {variant.num_timesteps}"
            )
        t = variant.num_timesteps - 1 - b.t_step if variant.time_flipped else b.t_step
        # (W - w) - x: one rounding per application, so re-flipping a
        # flipped coordinate reproduces it bit-exactly
        x = (variant.width - b.w) - b.x if variant.h_flipped else b.x
        out.append(replace(b, x=x, t_step=t))
    return out


def tta_merge(
    variant_outputs: Sequence[tuple[TtaVariant, Sequence[DetBox]]],
    tau_nms: float = 0.45,
    class_aware: bool = True,
) -> list[list[DetBox]]:
    """Unflip every variant's boxes and NMS-ensemble them per timestep.

    Returns one box list per timestep 0..L-1. Deterministic: boxes keep
    variant order, then input order, before score sorting inside NMS.
    """
    if not variant_outputs:
        raise InvalidInputError("tta_merge needs at least one variant")
    lengths = {v.num_timesteps for v, _ in variant_outputs}
    widths = {v.width for v, _ in variant_outputs}
    if len(lengths) > 1 or len(widths) > 1:
        raise InvalidInputError(
            f"variants disagree on sequence length {sorted(lengths)} or width {sorted(widths)}"
        )
    num_steps = lengths.pop()

    per_step: list[list[DetBox]] = [[] for _ in range(num_steps)]
    for variant, boxes in variant_outputs:
        for b in unflip_boxes(boxes, variant):
            per_step[b.t_step].append(b)
    return [nms(bucket, tau_nms, class_aware=class_aware) for bucket in per_step]
