"""Tracking-by-detection with linear motion and greedy IoU matching.

Tracks carry an exponentially decaying liveness score q: reset to 1 on a
match, multiplied by ``decay`` per unmatched step, deleted below ``tau_del``.
A track's length n counts successful matches only (creation included),
not elapsed lifetime, and survives gaps as long as q stays above the
deletion threshold. Gap inpainting synthesizes boxes at a long track's
unmatched timesteps by linear interpolation between matched boxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import InvalidInputError
from .geometry import DetBox, pairwise_iou

__all__ = [
    "TrackerParams",
    "Track",
    "TrackedBox",
    "Tracker",
    "predict",
    "step",
    "track_sequence",
    "run_tracker",
    "inpaint",
]


@dataclass(frozen=True)
class TrackerParams:
    tau_iou: float = 0.45
    tau_del: float = 0.55
    decay: float = 0.9
    init_q: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.tau_del < 1.0 and 0.0 < self.decay < 1.0):
            raise InvalidInputError("tau_del and decay must lie in (0, 1)")
        if not (0.0 < self.tau_iou < 1.0):
            raise InvalidInputError("tau_iou must lie in (0, 1)")


@dataclass
class Track:
    """Mutable per-object tracker state."""

    id: int
    class_id: int
    box: DetBox                      # box at the last processed timestep
    velocity: tuple[float, float]    # pixels per timestep
    n: int                           # successful-match count
    q: float                         # liveness score
    last_match_t: int
    anchor_box: DetBox               # box at the last match, for velocity updates
    history: list[tuple[int, DetBox, bool]] = field(default_factory=list)

    def matched_history(self) -> list[tuple[int, DetBox]]:
        return [(t, b) for t, b, m in self.history if m]


@dataclass(frozen=True)
class TrackedBox:
    box: DetBox
    track_id: int
    track_len: int
    inpainted: bool = False


def predict(track: Track, t_step: int) -> DetBox:
    """Advance the track's last box to ``t_step`` under constant velocity."""
    last_t = track.history[-1][0] if track.history else track.box.t_step
    dt = t_step - last_t
    if dt <= 0:
        raise InvalidInputError(f"prediction target {t_step} not after track time {last_t}")
    vx, vy = track.velocity
    return track.box.moved_to(track.box.cx + vx * dt, track.box.cy + vy * dt, t_step)


def _new_track(box: DetBox, track_id: int, params: TrackerParams) -> Track:
    return Track(
        id=track_id,
        class_id=box.class_id,
        box=box,
        velocity=(0.0, 0.0),
        n=1,
        q=params.init_q,
        last_match_t=box.t_step,
        anchor_box=box,
        history=[(box.t_step, box, True)],
    )


def _greedy_pairs(tracks, predicted, boxes, tau_iou):
    """(track_idx, box_idx) matches: IoU-descending greedy, same class only.

    Ties break by lower track id, then input box order, so the result does
    not depend on track-list or box-list permutations when IoUs differ.
    """
    if not tracks or not boxes:
        return []
    ious = pairwise_iou(predicted, boxes)
    cand = [
        (-ious[i, j], tracks[i].id, j, i)
        for i in range(len(tracks))
        for j in range(len(boxes))
        if tracks[i].class_id == boxes[j].class_id and ious[i, j] > tau_iou
    ]
    cand.sort()
    matched_t: set[int] = set()
    matched_b: set[int] = set()
    pairs = []
    for _, _, j, i in cand:
        if i in matched_t or j in matched_b:
            continue
        matched_t.add(i)
        matched_b.add(j)
        pairs.append((i, j))
    return pairs


class Tracker:
    """Sequential tracker for one sequence; owns the track-id counter."""

    def __init__(self, params: TrackerParams | None = None):
        self.params = params or TrackerParams()
        self.live: list[Track] = []
        self.dead: list[Track] = []
        self._next_id = 0

    def step(self, boxes: list[DetBox], t_step: int) -> list[int]:
        """Process one frame; returns the owning track id per input box."""
        params = self.params
        if any(b.t_step != t_step for b in boxes):
            raise InvalidInputError(f"boxes not all at timestep {t_step}")

        predicted = [predict(tr, t_step) for tr in self.live]
        pairs = _greedy_pairs(self.live, predicted, boxes, params.tau_iou)
        matched_tracks = {i for i, _ in pairs}
        matched_boxes = {j for _, j in pairs}
        owner = [-1] * len(boxes)

        for i, j in pairs:
            tr = self.live[i]
            det = boxes[j]
            dt = t_step - tr.last_match_t
            tr.velocity = (
                (det.cx - tr.anchor_box.cx) / dt,
                (det.cy - tr.anchor_box.cy) / dt,
            )
            tr.box = det
            tr.anchor_box = det
            tr.n += 1
            tr.q = 1.0
            tr.last_match_t = t_step
            tr.history.append((t_step, det, True))
            owner[j] = tr.id

        for i, tr in enumerate(self.live):
            if i in matched_tracks:
                continue
            tr.q *= params.decay
            tr.box = predicted[i]
            tr.history.append((t_step, predicted[i], False))

        for j, det in enumerate(boxes):
            if j in matched_boxes:
                continue
            self.live.append(_new_track(det, self._next_id, params))
            owner[j] = self._next_id
            self._next_id += 1

        still_live = []
        for tr in self.live:
            if tr.q < params.tau_del:
                self.dead.append(tr)
            else:
                still_live.append(tr)
        self.live = still_live
        return owner

    def finished_tracks(self) -> list[Track]:
        return sorted(self.dead + self.live, key=lambda tr: tr.id)


def step(
    tracks: list[Track],
    boxes: list[DetBox],
    t_step: int,
    params: TrackerParams,
    next_id: int | None = None,
) -> tuple[list[Track], int]:
    """One matching/update/decay/delete cycle over explicit track state.

    Returns the surviving tracks and the next free track id. Convenience
    wrapper over :class:`Tracker` for callers managing their own state.
    """
    tk = Tracker(params)
    tk.live = tracks
    tk._next_id = next_id if next_id is not None else (max((t.id for t in tracks), default=-1) + 1)
    tk.step(boxes, t_step)
    return tk.live, tk._next_id


def run_tracker(
    frames: list[list[DetBox]],
    params: TrackerParams | None = None,
) -> tuple[list[list[TrackedBox]], list[Track]]:
    """Track a whole sequence.

    Returns per-frame TrackedBox lists aligned index-for-index with the
    input boxes (geometry and scores untouched), plus all tracks for
    inpainting. Every box carries its final track's match count.
    """
    tk = Tracker(params)
    owners: list[list[int]] = []
    for t, boxes in enumerate(frames):
        boxes = [b if b.t_step == t else replace(b, t_step=t) for b in boxes]
        owners.append(tk.step(boxes, t))

    final_n = {tr.id: tr.n for tr in tk.finished_tracks()}
    out: list[list[TrackedBox]] = []
    for t, boxes in enumerate(frames):
        row = [
            TrackedBox(box=b, track_id=tid, track_len=final_n[tid])
            for b, tid in zip(boxes, owners[t])
        ]
        out.append(row)
    return out, tk.finished_tracks()


def track_sequence(frames: list[list[DetBox]], params: TrackerParams | None = None) -> list[TrackedBox]:
    """Flat list of tracked boxes in (timestep, input order)."""
    per_frame, _ = run_tracker(frames, params)
    return [tb for row in per_frame for tb in row]


def _interp_box(t: int, before: tuple[int, DetBox], after: tuple[int, DetBox]) -> DetBox:
    t0, b0 = before
    t1, b1 = after
    a = (t - t0) / (t1 - t0)
    x = b0.x + a * (b1.x - b0.x)
    y = b0.y + a * (b1.y - b0.y)
    w = b0.w + a * (b1.w - b0.w)
    h = b0.h + a * (b1.h - b0.h)
    src = b0 if (t - t0) <= (t1 - t) else b1
    return DetBox(
        x=x, y=y, w=w, h=h,
        class_id=src.class_id, t_step=t,
        p_obj=src.p_obj, p_iou=src.p_iou,
    )


def inpaint(tracks: list[Track], min_len: int) -> list[TrackedBox]:
    """Synthesize boxes at unmatched timesteps of tracks with n >= min_len.

    Gaps strictly between the first and last match are filled by linear
    interpolation between the bracketing matched boxes; scores copy from
    the nearest matched box. Inpainted boxes are training-ignored targets,
    so interpolated scores carry no weight.
    """
    if min_len < 1:
        raise InvalidInputError("min_len must be >= 1")
    out: list[TrackedBox] = []
    for tr in sorted(tracks, key=lambda tr: tr.id):
        if tr.n < min_len:
            continue
        matched = tr.matched_history()
        if len(matched) < 2:
            continue
        times = [t for t, _ in matched]
        idx = 0
        for t in range(times[0] + 1, times[-1]):
            if times[idx + 1] == t:
                idx += 1
                continue
            box = _interp_box(t, matched[idx], matched[idx + 1])
            out.append(TrackedBox(box=box, track_id=tr.id, track_len=tr.n, inpainted=True))
    return out
