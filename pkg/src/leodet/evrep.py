"""Event-stream ingestion and frame-like histogram tensors.

An event stream is stored column-wise as an int64 array with columns
(t_us, x, y, p). Histograms count events per polarity and temporal sub-bin
within a fixed window, channel index = 2 * bin + (p > 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "Event",
    "EventStream",
    "Histogram",
    "build_histograms",
    "time_flip_stream",
    "hflip_stream",
]

COL_T, COL_X, COL_Y, COL_P = 0, 1, 2, 3


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class EventStream:
    """Time-ordered events plus sensor geometry.

    ``events`` is an (N, 4) int64 array with columns (t_us, x, y, p),
    non-decreasing in t. All timestamps lie in [0, duration_us).
    """

    events: np.ndarray
    width: int
    height: int
    duration_us: int

    def __post_init__(self):
        ev = np.asarray(self.events, dtype=np.int64).reshape(-1, 4)
        object.__setattr__(self, "events", ev)
        if len(ev):
            t, x, y, p = ev[:, COL_T], ev[:, COL_X], ev[:, COL_Y], ev[:, COL_P]
            if np.any(np.diff(t) < 0):
                raise InvalidInputError("event stream is not sorted by timestamp")
            if t[0] < 0 or t[-1] >= self.duration_us:
                raise InvalidInputError("event timestamps must lie in [0, duration_us)")
            if np.any(x < 0) or np.any(x >= self.width) or np.any(y < 0) or np.any(y >= self.height):
                raise InvalidInputError("event coordinates outside sensor resolution")
            if np.any(np.abs(p) != 1):
                raise InvalidInputError("polarity must be -1 or +1")

    def __len__(self) -> int:
        return len(self.events)

    @classmethod
    def from_events(cls, events: list[Event], width: int, height: int, duration_us: int) -> "EventStream":
        arr = np.array([[e.t, e.x, e.y, e.p] for e in events], dtype=np.int64).reshape(-1, 4)
        return cls(arr, width, height, duration_us)

    def to_events(self) -> list[Event]:
        return [Event(int(x), int(y), int(t), int(p)) for t, x, y, p in self.events]


@dataclass(frozen=True)
class Histogram:
    """Per-window event counts of shape (2 * bins, H, W).

    ``partial`` marks the trailing window of a stream whose duration is not
    an exact multiple of the window; it is emitted so timestep indexing stays
    aligned with label timesteps.
    """

    data: np.ndarray
    window_us: int
    bins: int
    saturation: int
    t_step: int
    partial: bool = field(default=False)


def build_histograms(
    stream: EventStream,
    window_us: int,
    bins: int = 5,
    saturation: int = 255,
) -> list[Histogram]:
    """Build one histogram per window of the stream.

    Window k covers [k * window_us, (k + 1) * window_us). Each event
    increments exactly one cell; cells clamp at ``saturation``.
    """
    if window_us <= 0:
        raise InvalidInputError("window_us must be positive")
    if bins < 1:
        raise InvalidInputError("bins must be >= 1")
    if window_us % bins != 0:
        raise InvalidInputError("window_us must be divisible by bins")
    if saturation < 1:
        raise InvalidInputError("saturation must be >= 1")

    n_full, rem = divmod(stream.duration_us, window_us)
    n_windows = int(n_full) + (1 if rem else 0)
    h, w = stream.height, stream.width
    sub = window_us // bins

    counts = np.zeros((n_windows, 2 * bins, h, w), dtype=np.int64)
    if len(stream):
        t = stream.events[:, COL_T]
        x = stream.events[:, COL_X]
        y = stream.events[:, COL_Y]
        p = stream.events[:, COL_P]
        win = t // window_us
        b = (t - win * window_us) // sub
        ch = 2 * b + (p > 0)
        np.add.at(counts, (win, ch, y, x), 1)
    np.clip(counts, 0, saturation, out=counts)

    return [
        Histogram(
            data=counts[k],
            window_us=window_us,
            bins=bins,
            saturation=saturation,
            t_step=k,
            partial=(rem != 0 and k == n_windows - 1),
        )
        for k in range(n_windows)
    ]


def time_flip_stream(stream: EventStream, flip_polarity: bool = True) -> EventStream:
    """Replay the stream backwards: t' = duration - 1 - t, order reversed.

    Polarity is negated by default (a brightness increase replayed backwards
    is a decrease); disable via ``flip_polarity``.
    """
    ev = stream.events[::-1].copy()
    ev[:, COL_T] = stream.duration_us - 1 - ev[:, COL_T]
    if flip_polarity:
        ev[:, COL_P] = -ev[:, COL_P]
    return EventStream(ev, stream.width, stream.height, stream.duration_us)


def hflip_stream(stream: EventStream) -> EventStream:
    """Mirror the stream horizontally: x' = W - 1 - x; everything else kept."""
    ev = stream.events.copy()
    ev[:, COL_X] = stream.width - 1 - ev[:, COL_X]
    return EventStream(ev, stream.width, stream.height, stream.duration_us)
