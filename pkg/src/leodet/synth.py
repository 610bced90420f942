"""Seeded synthetic scenarios: trajectories, noisy detections, events.

Scenes are small numbers of objects on piecewise-linear trajectories.
Detector behavior is simulated per TTA variant with independent misses,
position jitter, and short-lived false positives; nearly static objects
miss more often (they trigger few events). Events are schematic: emitted
along box edges in proportion to per-step displacement, enough to drive
the histogram pipeline but with no claim of sensor realism.

Everything is drawn from the package's fixed xoshiro256** generator, so a
scenario's outputs are byte-identical across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .evrep import EventStream
from .geometry import DetBox
from .rng import SplitMix64, Xoshiro256StarStar
from .tta import TtaVariant

__all__ = [
    "ObjectSpec",
    "NoiseModel",
    "Scenario",
    "SynthResult",
    "generate",
    "generate_tta",
    "scenario_library",
]

VARIANT_KEYS = ("identity", "tflip", "hflip", "thflip")
STATIC_DISPLACEMENT = 0.5   # px/step below which the static miss rate applies
WINDOW_US = 50_000


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode():
        h ^= byte
        h = (h * 0x100000001B3) & ((1 << 64) - 1)
    return h


def _stream(seed: int, tag: str) -> Xoshiro256StarStar:
    return Xoshiro256StarStar(SplitMix64(seed ^ _fnv1a64(tag)).next_u64())


@dataclass(frozen=True)
class ObjectSpec:
    """One scripted object: class, lifetime, control points, size."""

    class_id: int
    spawn_t: int
    despawn_t: int                                  # exclusive
    waypoints: tuple[tuple[float, float, float], ...]  # (t, cx, cy)
    size: tuple[float, float]

    def __post_init__(self):
        if self.despawn_t <= self.spawn_t:
            raise InvalidInputError("despawn_t must be after spawn_t")
        if len(self.waypoints) < 1:
            raise InvalidInputError("need at least one waypoint")


@dataclass(frozen=True)
class NoiseModel:
    miss_prob_base: float = 0.0
    miss_prob_static: float = 0.0
    fp_rate: float = 0.0            # expected false positives spawned per frame
    fp_lifetime: float = 1.0        # geometric mean length in frames
    jitter_sigma: float = 0.0       # px
    tp_score_range: tuple[float, float] = (0.8, 0.95)
    fp_score_range: tuple[float, float] = (0.65, 0.9)

    def __post_init__(self):
        for p in (self.miss_prob_base, self.miss_prob_static):
            if not (0.0 <= p <= 1.0):
                raise InvalidInputError("miss probabilities must lie in [0, 1]")
        for lo, hi in (self.tp_score_range, self.fp_score_range):
            if not (0.0 < lo <= hi < 1.0):
                raise InvalidInputError("score ranges must lie inside (0, 1)")


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    duration_steps: int
    width: int
    height: int
    num_classes: int
    objects: tuple[ObjectSpec, ...]
    noise: NoiseModel = field(default_factory=NoiseModel)
    window_us: int = WINDOW_US

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)


@dataclass
class SynthResult:
    gt_per_frame: list[list[DetBox]]
    detections_per_frame: list[list[DetBox]]
    events: EventStream


def _center_at(obj: ObjectSpec, t: int, width: int, height: int) -> tuple[float, float]:
    """Piecewise-linear interpolation, clamped so the box stays inside."""
    wps = obj.waypoints
    if t <= wps[0][0]:
        cx, cy = wps[0][1], wps[0][2]
    elif t >= wps[-1][0]:
        cx, cy = wps[-1][1], wps[-1][2]
    else:
        for (t0, x0, y0), (t1, x1, y1) in zip(wps, wps[1:]):
            if t0 <= t <= t1:
                a = (t - t0) / (t1 - t0) if t1 > t0 else 0.0
                cx, cy = x0 + a * (x1 - x0), y0 + a * (y1 - y0)
                break
    w, h = obj.size
    cx = min(max(cx, w / 2), width - w / 2)
    cy = min(max(cy, h / 2), height - h / 2)
    return cx, cy


def _displacement(obj: ObjectSpec, t: int, width: int, height: int) -> float:
    ref = t - 1 if t > obj.spawn_t else t + 1
    if not (obj.spawn_t <= ref < obj.despawn_t):
        return 0.0
    cx0, cy0 = _center_at(obj, ref, width, height)
    cx1, cy1 = _center_at(obj, t, width, height)
    return float(np.hypot(cx1 - cx0, cy1 - cy0))


def _gt_box(obj: ObjectSpec, t: int, scenario: Scenario) -> DetBox:
    cx, cy = _center_at(obj, t, scenario.width, scenario.height)
    w, h = obj.size
    p_iou = tuple(1.0 if c == obj.class_id else 0.0 for c in range(scenario.num_classes))
    return DetBox(x=cx - w / 2, y=cy - h / 2, w=w, h=h,
                  class_id=obj.class_id, t_step=t, p_obj=1.0, p_iou=p_iou)


def _ground_truth(scenario: Scenario) -> list[list[DetBox]]:
    frames: list[list[DetBox]] = [[] for _ in range(scenario.duration_steps)]
    for obj in scenario.objects:
        for t in range(obj.spawn_t, min(obj.despawn_t, scenario.duration_steps)):
            frames[t].append(_gt_box(obj, t, scenario))
    return frames


def _score_vector(rng: Xoshiro256StarStar, class_id: int, num_classes: int,
                  lo: float, hi: float) -> tuple[float, tuple[float, ...]]:
    p_iou = [rng.uniform(0.01, 0.15) for _ in range(num_classes)]
    p_iou[class_id] = rng.uniform(lo, hi)
    p_obj = rng.uniform(lo, hi)
    return p_obj, tuple(p_iou)


def _variant_detections(scenario: Scenario, key: str) -> list[DetBox]:
    """Simulated detector output for one TTA variant, in the variant's frame."""
    noise = scenario.noise
    L, W, H = scenario.duration_steps, scenario.width, scenario.height
    time_flipped = key in ("tflip", "thflip")
    h_flipped = key in ("hflip", "thflip")
    rng = _stream(scenario.seed, f"det:{key}")
    lo, hi = noise.tp_score_range
    out: list[DetBox] = []

    for t in range(L):
        for obj in scenario.objects:
            if not (obj.spawn_t <= t < min(obj.despawn_t, L)):
                continue
            disp = _displacement(obj, t, W, H)
            miss_p = noise.miss_prob_static if disp < STATIC_DISPLACEMENT else noise.miss_prob_base
            missed = rng.random() < miss_p
            dx = rng.normal(0.0, noise.jitter_sigma) if noise.jitter_sigma else 0.0
            dy = rng.normal(0.0, noise.jitter_sigma) if noise.jitter_sigma else 0.0
            p_obj, p_iou = _score_vector(rng, obj.class_id, scenario.num_classes, lo, hi)
            if missed:
                continue
            gt = _gt_box(obj, t, scenario)
            x, y = gt.x + dx, gt.y + dy
            t_var = L - 1 - t if time_flipped else t
            x_var = (W - gt.w) - x if h_flipped else x
            out.append(DetBox(x=x_var, y=y, w=gt.w, h=gt.h, class_id=obj.class_id,
                              t_step=t_var, p_obj=p_obj, p_iou=p_iou))

    fp_rng = _stream(scenario.seed, f"fp:{key}")
    flo, fhi = noise.fp_score_range
    for t in range(L):
        for _ in range(fp_rng.poisson(noise.fp_rate)):
            life = fp_rng.geometric(noise.fp_lifetime)
            w = fp_rng.uniform(18.0, 70.0)
            h = fp_rng.uniform(14.0, 50.0)
            cx = fp_rng.uniform(0.0, W)
            cy = fp_rng.uniform(0.0, H)
            vx = fp_rng.uniform(-3.0, 3.0)
            vy = fp_rng.uniform(-2.0, 2.0)
            cls = fp_rng.randbelow(scenario.num_classes)
            for k in range(life):
                if t + k >= L:
                    break
                p_obj, p_iou = _score_vector(fp_rng, cls, scenario.num_classes, flo, fhi)
                t_var = L - 1 - (t + k) if time_flipped else t + k
                x = cx + vx * k - w / 2
                x_var = (W - w) - x if h_flipped else x
                out.append(DetBox(x=x_var, y=cy + vy * k - h / 2, w=w, h=h,
                                  class_id=cls, t_step=t_var, p_obj=p_obj, p_iou=p_iou))
    out.sort(key=lambda b: b.t_step)
    return out


def _events(scenario: Scenario) -> EventStream:
    rng = _stream(scenario.seed, "events")
    L, W, H = scenario.duration_steps, scenario.width, scenario.height
    window = scenario.window_us
    rows: list[tuple[int, int, int, int]] = []
    for t in range(L):
        for obj in scenario.objects:
            if not (obj.spawn_t <= t < min(obj.despawn_t, L)):
                continue
            disp = max(_displacement(obj, t, W, H), 0.05)
            gt = _gt_box(obj, t, scenario)
            count = int(round(0.25 * (gt.w + gt.h) * disp))
            for _ in range(count):
                u = rng.uniform(0.0, 2.0 * (gt.w + gt.h))
                if u < gt.w:
                    ex, ey = gt.x + u, gt.y
                elif u < gt.w + gt.h:
                    ex, ey = gt.x2, gt.y + (u - gt.w)
                elif u < 2 * gt.w + gt.h:
                    ex, ey = gt.x + (u - gt.w - gt.h), gt.y2
                else:
                    ex, ey = gt.x, gt.y + (u - 2 * gt.w - gt.h)
                x = min(max(int(ex), 0), W - 1)
                y = min(max(int(ey), 0), H - 1)
                ts = t * window + rng.randbelow(window)
                rows.append((ts, x, y, 1 if rng.random() < 0.5 else -1))
    rows.sort(key=lambda r: r[0])
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return EventStream(arr, W, H, L * window)


def generate(scenario: Scenario) -> SynthResult:
    """Ground truth, identity-variant detections, and the event stream."""
    gt = _ground_truth(scenario)
    flat = _variant_detections(scenario, "identity")
    dets: list[list[DetBox]] = [[] for _ in range(scenario.duration_steps)]
    for b in flat:
        dets[b.t_step].append(b)
    return SynthResult(gt_per_frame=gt, detections_per_frame=dets, events=_events(scenario))


def generate_tta(
    scenario: Scenario,
    variants: tuple[str, ...] = ("identity", "tflip", "hflip", "thflip"),
) -> list[tuple[TtaVariant, list[DetBox]]]:
    """Per-variant detector outputs, each expressed in its own flipped frame.

    Misses, jitter, scores, and false positives are drawn independently per
    variant, modeling a detector whose failures differ between the original
    and transformed streams.
    """
    unknown = set(variants) - set(VARIANT_KEYS)
    if unknown:
        raise InvalidInputError(f"unknown TTA variants: {sorted(unknown)}")
    out = []
    for key in variants:
        variant = TtaVariant(
            time_flipped=key in ("tflip", "thflip"),
            h_flipped=key in ("hflip", "thflip"),
            num_timesteps=scenario.duration_steps,
            width=scenario.width,
        )
        out.append((variant, _variant_detections(scenario, key)))
    return out


def _walk(t0: float, cx: float, cy: float, steps: list[tuple[float, float, float]]):
    """Waypoints from a start plus (duration, vx, vy) legs."""
    wps = [(t0, cx, cy)]
    t, x, y = t0, cx, cy
    for dt, vx, vy in steps:
        t, x, y = t + dt, x + vx * dt, y + vy * dt
        wps.append((t, x, y))
    return tuple(wps)


def scenario_library() -> dict[str, Scenario]:
    """Named seeded scenarios covering the pipeline's qualitative claims."""
    lib: dict[str, Scenario] = {}

    # Nearly stationary car: few events, so the per-variant miss rate is
    # high and TTA ensembling visibly lifts recall.
    lib["static-car"] = Scenario(
        name="static-car", seed=101, duration_steps=24,
        width=304, height=240, num_classes=2,
        objects=(
            ObjectSpec(0, 0, 24, _walk(0, 150, 120, [(24, 0.1, 0.0)]), (60, 40)),
        ),
        noise=NoiseModel(miss_prob_base=0.05, miss_prob_static=0.5,
                         fp_rate=0.2, fp_lifetime=1.0, jitter_sigma=0.4,
                         tp_score_range=(0.75, 0.95)),
    )

    # Eight overlapping pedestrians wandering inside a small region.
    peds = []
    for i in range(8):
        cx = 130.0 + 11.0 * i
        cy = 110.0 + 6.0 * (i % 4)
        vx = 0.8 if i % 2 == 0 else -0.8
        peds.append(ObjectSpec(1, 0, 20, _walk(0, cx, cy, [(20, vx, 0.3)]), (14, 32)))
    lib["crowd"] = Scenario(
        name="crowd", seed=202, duration_steps=20,
        width=304, height=240, num_classes=2,
        objects=tuple(peds),
        noise=NoiseModel(miss_prob_base=0.1, miss_prob_static=0.25,
                         fp_rate=0.5, fp_lifetime=1.0, jitter_sigma=0.3,
                         tp_score_range=(0.75, 0.95)),
    )

    # An object crossing the view in fewer frames than the minimum track
    # length: all its (correct) boxes end up IGNORE.
    lib["fast-crosser"] = Scenario(
        name="fast-crosser", seed=303, duration_steps=21,
        width=304, height=240, num_classes=2,
        objects=(
            ObjectSpec(0, 0, 21, _walk(0, 80, 180, [(21, 1.5, 0.0)]), (58, 36)),
            ObjectSpec(0, 8, 12, _walk(8, 100, 80, [(4, 14.0, 0.0)]), (56, 36)),
        ),
        noise=NoiseModel(tp_score_range=(0.8, 0.95)),
    )

    # Heavy transient false positives with confident scores: hard-threshold
    # filtering alone keeps them all, tracking removes them.
    lib["fp-storm"] = Scenario(
        name="fp-storm", seed=404, duration_steps=40,
        width=304, height=240, num_classes=2,
        objects=(
            ObjectSpec(0, 0, 40, _walk(0, 60, 60, [(40, 2.0, 0.8)]), (54, 34)),
            ObjectSpec(0, 0, 40, _walk(0, 240, 170, [(40, -1.6, -0.5)]), (62, 40)),
            ObjectSpec(0, 0, 40, _walk(0, 150, 200, [(40, 1.2, -0.9)]), (48, 30)),
        ),
        noise=NoiseModel(miss_prob_base=0.02, fp_rate=4.0, fp_lifetime=1.0,
                         jitter_sigma=0.3, tp_score_range=(0.75, 0.95),
                         fp_score_range=(0.65, 0.95)),
    )

    # Mixed driving scene: moving and semi-static cars, pedestrians, one
    # fast crosser, moderate noise. The end-to-end smoke scenario.
    lib["urban-01"] = Scenario(
        name="urban-01", seed=505, duration_steps=32,
        width=304, height=240, num_classes=2,
        objects=(
            ObjectSpec(0, 0, 32, _walk(0, 70, 150, [(32, 2.5, 0.0)]), (58, 38)),
            ObjectSpec(0, 0, 32, _walk(0, 230, 100, [(32, 0.3, 0.1)]), (50, 32)),
            ObjectSpec(1, 2, 30, _walk(2, 120, 200, [(28, 1.0, -0.4)]), (14, 34)),
            ObjectSpec(1, 0, 32, _walk(0, 280, 190, [(32, -0.9, 0.0)]), (13, 30)),
            ObjectSpec(1, 14, 18, _walk(14, 40, 60, [(4, 10.0, 2.0)]), (16, 34)),
        ),
        noise=NoiseModel(miss_prob_base=0.08, miss_prob_static=0.45,
                         fp_rate=1.0, fp_lifetime=1.2, jitter_sigma=0.4,
                         tp_score_range=(0.72, 0.95), fp_score_range=(0.62, 0.9)),
    )
    return lib
