"""Pipeline configuration: TOML loading, validation, canonical digest.

Unknown keys are a hard error so config drift fails loudly. The digest is
the SHA-256 of the fully resolved config in canonical JSON; it is stamped
into output headers so results stay traceable to their settings.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidConfigError
from .evaluate import EvalFilter
from .pipeline import ThresholdConfig, derive_thresholds
from .tracker import TrackerParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["PipelineConfig", "load_config", "default_config", "CLASS_PROFILES", "ENV_CONFIG"]

ENV_CONFIG = "LEOD_CONFIG"

CLASS_PROFILES = {
    "gen1": ["car", "pedestrian"],
    "1mpx": ["car", "pedestrian", "two-wheeler"],
}

# undersized-GT evaluation filters (min diagonal, min side) per resolution
# profile; not derived from any single source, fully overridable in [eval]
SIZE_FILTER_DEFAULTS = {
    "gen1": (30.0, 10.0),
    "1mpx": (60.0, 20.0),
}

DEFAULTS: dict = {
    "nms": {"tau": 0.45, "class_aware": True},
    "tta": {"flip_polarity": True, "use_combined": True},
    "tracker": {
        "tau_iou": 0.45,
        "tau_del": 0.55,
        "decay": 0.9,
        "init_q": 0.9,
        "inpaint_rule": "per_direction",   # or "off" to skip gap inpainting
    },
    "thresholds": {
        "profile": "gen1",
        "classes": [],          # explicit class names override the profile
        "tau_hard_car": 0.6,
        "t_trk": 6,
        "overrides": {},
        "soft_overrides": {},
    },
    "soft": {"rule": "and"},
    "assign": {"strategy": "dynamic_k", "strides": [8, 16, 32], "center_radius": 2.5, "topk": 10},
    # negative sizes mean "use the class profile's default filter"
    "eval": {"iou_set": "coco", "tau_match": 0.75, "min_diagonal": -1.0, "min_side": -1.0},
    "histogram": {"window_us": 50000, "bins": 5, "saturation": 255},
    "protocol": {"ratio": 0.05, "seed": 0},
    "export": {"clamp_boxes": True},
}

# keys whose values are free-form tables rather than fixed schema
_OPEN_TABLES = {("thresholds", "overrides"), ("thresholds", "soft_overrides")}


def _merge(section: str, defaults: dict, overrides: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if key not in defaults:
            raise InvalidConfigError(f"unknown config key [{section}] {key}")
        base = defaults[key]
        if (section, key) in _OPEN_TABLES:
            if not isinstance(value, dict):
                raise InvalidConfigError(f"[{section}] {key} must be a table")
            out[key] = dict(value)
        elif isinstance(base, bool) != isinstance(value, bool) or (
            not isinstance(base, bool)
            and not isinstance(value, type(base))
            and not (isinstance(base, float) and isinstance(value, int))
        ):
            raise InvalidConfigError(
                f"[{section}] {key} expects {type(base).__name__}, got {type(value).__name__}"
            )
        else:
            out[key] = float(value) if isinstance(base, float) else value
    return out


@dataclass
class PipelineConfig:
    data: dict

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    @property
    def digest(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def class_names(self) -> list[str]:
        th = self.data["thresholds"]
        if th["classes"]:
            return list(th["classes"])
        profile = th["profile"]
        if profile not in CLASS_PROFILES:
            raise InvalidConfigError(
                f"unknown class profile {profile!r}; known: {sorted(CLASS_PROFILES)}"
            )
        return list(CLASS_PROFILES[profile])

    def threshold_config(self) -> ThresholdConfig:
        th = self.data["thresholds"]
        return derive_thresholds(
            tau_hard_car=th["tau_hard_car"],
            dataset_classes=self.class_names(),
            overrides=th["overrides"],
            t_trk=th["t_trk"],
            soft_overrides=th["soft_overrides"],
        )

    def tracker_params(self) -> TrackerParams:
        tr = self.data["tracker"]
        return TrackerParams(
            tau_iou=tr["tau_iou"], tau_del=tr["tau_del"],
            decay=tr["decay"], init_q=tr["init_q"],
        )

    def eval_filter(self) -> EvalFilter:
        ev = self.data["eval"]
        diag, side = ev["min_diagonal"], ev["min_side"]
        profile_diag, profile_side = SIZE_FILTER_DEFAULTS.get(
            self.data["thresholds"]["profile"], (0.0, 0.0)
        )
        return EvalFilter(
            min_diagonal=profile_diag if diag < 0 else diag,
            min_side=profile_side if side < 0 else side,
        )

    def iou_thresholds(self) -> list[float]:
        from .evaluate import COCO_IOU_THRESHOLDS

        spec = self.data["eval"]["iou_set"]
        if spec == "coco":
            return list(COCO_IOU_THRESHOLDS)
        try:
            values = [float(v) for v in spec.split(",")]
        except (AttributeError, ValueError) as exc:
            raise InvalidConfigError(f"eval.iou_set must be 'coco' or a float list: {spec!r}") from exc
        if not values or any(not 0 < v < 1 for v in values):
            raise InvalidConfigError(f"eval.iou_set values must lie in (0, 1): {spec!r}")
        return values


def default_config() -> PipelineConfig:
    return PipelineConfig(copy.deepcopy(DEFAULTS))


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Load TOML config; falls back to $LEOD_CONFIG, then built-in defaults."""
    if path is None:
        env = os.environ.get(ENV_CONFIG)
        if env:
            path = env
    if path is None:
        return default_config()
    try:
        raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise InvalidConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfigError(f"config file {path}: {exc}") from exc

    data = {}
    for section, defaults in DEFAULTS.items():
        overrides = raw.pop(section, {})
        if not isinstance(overrides, dict):
            raise InvalidConfigError(f"config section [{section}] must be a table")
        data[section] = _merge(section, defaults, overrides)
    if raw:
        raise InvalidConfigError(f"unknown config sections: {sorted(raw)}")
    return PipelineConfig(data)
