"""Labeled-subset generation for sparse and sequence-level supervision.

``wsod_split`` keeps an index-uniform subset of each sequence's labels;
``ssod_split`` keeps a few whole sequences, chosen by a seeded shuffle
until the label budget is reached. Both are deterministic, so split files
are byte-reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import InvalidInputError
from .rng import Xoshiro256StarStar

__all__ = ["LabelSplit", "wsod_split", "ssod_split"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelSplit:
    mode: str                      # "wsod" | "ssod" | "full"
    ratio: float
    kept: dict[str, list[int]]     # sequence id -> sorted kept label timestamps
    seed: int = 0

    def total_kept(self) -> int:
        return sum(len(v) for v in self.kept.values())


def wsod_split(label_index: Mapping[str, Sequence[int]], ratio: float) -> LabelSplit:
    """Keep an index-uniform fraction of every sequence's labels.

    With m labels, k = max(1, round(ratio * m)) survive at stride-uniform
    indices floor(j * m / k). Deterministic and seed-free; at least one
    label per sequence is always kept.
    """
    if not (0.0 < ratio <= 1.0):
        raise InvalidInputError(f"ratio={ratio} must lie in (0, 1]")
    if not label_index:
        raise InvalidInputError("label index is empty")
    kept = {}
    for seq_id in sorted(label_index):
        stamps = sorted(label_index[seq_id])
        if not stamps:
            kept[seq_id] = []
            continue
        m = len(stamps)
        k = max(1, int(ratio * m + 0.5))
        kept[seq_id] = [stamps[(j * m) // k] for j in range(k)]
    return LabelSplit(mode="wsod", ratio=ratio, kept=kept, seed=0)


def ssod_split(label_index: Mapping[str, Sequence[int]], ratio: float, seed: int = 0) -> LabelSplit:
    """Keep whole sequences until the label budget is first reached.

    Sequences are shuffled by the seeded generator and greedily selected
    until their cumulative label count reaches ratio * total; selected
    sequences keep every label, all others none. If the budget is smaller
    than every sequence, the single smallest sequence is kept instead.
    """
    if not (0.0 < ratio < 1.0):
        raise InvalidInputError(f"ratio={ratio} must lie in (0, 1)")
    if not label_index:
        raise InvalidInputError("label index is empty")

    sizes = {seq_id: len(label_index[seq_id]) for seq_id in label_index}
    total = sum(sizes.values())
    target = ratio * total

    nonempty = [s for s in sorted(sizes) if sizes[s] > 0]
    if not nonempty:
        raise InvalidInputError("label index contains no labels")
    if target < min(sizes[s] for s in nonempty):
        smallest = min(nonempty, key=lambda s: (sizes[s], s))
        log.warning(
            "ssod ratio %.4g keeps fewer labels than any sequence; keeping %r alone",
            ratio,
            smallest,
        )
        selected = [smallest]
    else:
        order = sorted(label_index)
        Xoshiro256StarStar(seed).shuffle(order)
        selected = []
        cum = 0
        for seq_id in order:
            if cum >= target:
                break
            selected.append(seq_id)
            cum += sizes[seq_id]

    chosen = set(selected)
    kept = {
        seq_id: sorted(label_index[seq_id]) if seq_id in chosen else []
        for seq_id in sorted(label_index)
    }
    return LabelSplit(mode="ssod", ratio=ratio, kept=kept, seed=seed)
