"""Interchange file formats: EVB1 events, CSV events, NDJSON detections.

The detection file is NDJSON: a header line carrying the format tag,
class names, sensor geometry, and sequence length, followed by one record
per box. Records are ordered (sequence, timestep, input order) so identical
inputs produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import FormatError, InvalidInputError
from .evrep import EventStream, Histogram
from .geometry import DetBox
from .pipeline import Certainty, Provenance, PseudoLabel, PseudoLabelSet
from .protocol import LabelSplit

__all__ = [
    "FORMAT_TAG",
    "BoxRecord",
    "DetectionFile",
    "read_detection_file",
    "write_detection_file",
    "read_evb1",
    "write_evb1",
    "read_events_csv",
    "write_events_csv",
    "load_events",
    "register_event_reader",
    "read_split",
    "write_split",
    "save_histograms",
    "load_predictions",
]

FORMAT_TAG = "leodet/1"
EVB1_MAGIC = b"EVB1"
EVB1_HEADER = struct.Struct("<4sHHQ")
EVB1_RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "V7")]
)


@dataclass(frozen=True)
class BoxRecord:
    seq: str
    box: DetBox
    src: str = "det"               # det | gt | pseudo
    cert: str | None = None        # keep | ignore (pseudo only)
    prov: str | None = None        # detected | inpainted (pseudo only)
    tlen_f: int | None = None
    tlen_b: int | None = None


@dataclass
class DetectionFile:
    classes: list[str]
    width: int
    height: int
    num_steps: int
    records: list[BoxRecord] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def sequences(self) -> list[str]:
        return sorted({r.seq for r in self.records})

    def frames(self, seq: str, src: str | None = None) -> list[list[DetBox]]:
        """Per-timestep box lists for one sequence, optionally by source."""
        out: list[list[DetBox]] = [[] for _ in range(self.num_steps)]
        for r in self.records:
            if r.seq == seq and (src is None or r.src == src):
                out[r.box.t_step].append(r.box)
        return out

    def gt_by_step(self, seq: str) -> dict[int, list[DetBox]]:
        out: dict[int, list[DetBox]] = {}
        for r in self.records:
            if r.seq == seq and r.src == "gt":
                out.setdefault(r.box.t_step, []).append(r.box)
        return out

    def label_index(self) -> dict[str, list[int]]:
        """Per-sequence sorted GT label timesteps (for split generation)."""
        idx: dict[str, set[int]] = {}
        for r in self.records:
            if r.src == "gt":
                idx.setdefault(r.seq, set()).add(r.box.t_step)
        return {seq: sorted(ts) for seq, ts in idx.items()}

    def pseudo_label_set(self, seq: str) -> PseudoLabelSet:
        labels: list[list[PseudoLabel]] = [[] for _ in range(self.num_steps)]
        for r in self.records:
            if r.seq != seq or r.src not in ("pseudo", "gt"):
                continue
            labels[r.box.t_step].append(
                PseudoLabel(
                    box=r.box,
                    certainty=Certainty(r.cert or "keep"),
                    provenance=Provenance(r.prov or "detected"),
                    track_len_fwd=r.tlen_f or 0,
                    track_len_bwd=r.tlen_b or 0,
                    source=r.src,
                )
            )
        return PseudoLabelSet(
            sequence_id=seq,
            labels=labels,
            round_index=int(self.extra.get("round", 1)),
            config_digest=str(self.extra.get("config_digest", "")),
        )


def _record_to_json(r: BoxRecord) -> dict:
    b = r.box
    d = {
        "seq": r.seq,
        "t": b.t_step,
        "cls": b.class_id,
        "x": b.x,
        "y": b.y,
        "w": b.w,
        "h": b.h,
        "p_obj": b.p_obj,
        "p_iou": list(b.p_iou),
        "src": r.src,
    }
    if r.cert is not None:
        d["cert"] = r.cert
    if r.prov is not None:
        d["prov"] = r.prov
    if r.tlen_f is not None:
        d["tlen_f"] = r.tlen_f
    if r.tlen_b is not None:
        d["tlen_b"] = r.tlen_b
    return d


def write_detection_file(path: str | Path, df: DetectionFile) -> None:
    header = {
        "format": FORMAT_TAG,
        "classes": list(df.classes),
        "width": df.width,
        "height": df.height,
        "num_steps": df.num_steps,
    }
    header.update(df.extra)
    records = sorted(
        enumerate(df.records), key=lambda kv: (kv[1].seq, kv[1].box.t_step, kv[0])
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for _, r in records:
            fh.write(json.dumps(_record_to_json(r), sort_keys=True) + "\n")


def read_detection_file(path: str | Path) -> DetectionFile:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty detection file")
    header = json.loads(lines[0])
    if header.get("format") != FORMAT_TAG:
        raise FormatError(f"{path}: missing or wrong format tag (expected {FORMAT_TAG})")
    classes = header["classes"]
    extra = {
        k: v
        for k, v in header.items()
        if k not in ("format", "classes", "width", "height", "num_steps")
    }
    df = DetectionFile(
        classes=classes,
        width=int(header["width"]),
        height=int(header["height"]),
        num_steps=int(header["num_steps"]),
        extra=extra,
    )
    for ln in lines[1:]:
        d = json.loads(ln)
        if d["cls"] >= len(classes) or d["cls"] < 0:
            raise FormatError(f"{path}: record class {d['cls']} outside {len(classes)} classes")
        if not (0 <= d["t"] < df.num_steps):
            raise FormatError(f"{path}: record timestep {d['t']} outside 0..{df.num_steps - 1}")
        box = DetBox(
            x=float(d["x"]), y=float(d["y"]), w=float(d["w"]), h=float(d["h"]),
            class_id=int(d["cls"]), t_step=int(d["t"]),
            p_obj=float(d["p_obj"]), p_iou=tuple(float(v) for v in d["p_iou"]),
        )
        df.records.append(
            BoxRecord(
                seq=str(d["seq"]), box=box, src=d.get("src", "det"),
                cert=d.get("cert"), prov=d.get("prov"),
                tlen_f=d.get("tlen_f"), tlen_b=d.get("tlen_b"),
            )
        )
    return df


def pseudo_records(pls: PseudoLabelSet) -> list[BoxRecord]:
    """BoxRecords for a forged label set (GT overlays keep src='gt')."""
    out = []
    for row in pls.labels:
        for pl in row:
            if pl.source == "gt":
                out.append(BoxRecord(seq=pls.sequence_id, box=pl.box, src="gt"))
            else:
                out.append(
                    BoxRecord(
                        seq=pls.sequence_id,
                        box=pl.box,
                        src="pseudo",
                        cert=pl.certainty.value,
                        prov=pl.provenance.value,
                        tlen_f=pl.track_len_fwd,
                        tlen_b=pl.track_len_bwd,
                    )
                )
    return out


# ---------------------------------------------------------------------------
# event files

def write_evb1(path: str | Path, stream: EventStream) -> None:
    rec = np.zeros(len(stream), dtype=EVB1_RECORD_DTYPE)
    rec["t"] = stream.events[:, 0]
    rec["x"] = stream.events[:, 1]
    rec["y"] = stream.events[:, 2]
    rec["p"] = stream.events[:, 3]
    with open(path, "wb") as fh:
        fh.write(EVB1_HEADER.pack(EVB1_MAGIC, stream.width, stream.height, stream.duration_us))
        fh.write(rec.tobytes())


def read_evb1(path: str | Path) -> EventStream:
    raw = Path(path).read_bytes()
    if len(raw) < EVB1_HEADER.size:
        raise FormatError(f"{path}: truncated EVB1 header")
    magic, width, height, duration = EVB1_HEADER.unpack_from(raw)
    if magic != EVB1_MAGIC:
        raise FormatError(f"{path}: bad EVB1 magic {magic!r}")
    body = raw[EVB1_HEADER.size:]
    if len(body) % EVB1_RECORD_DTYPE.itemsize:
        raise FormatError(f"{path}: EVB1 body is not a whole number of records")
    rec = np.frombuffer(body, dtype=EVB1_RECORD_DTYPE)
    ev = np.empty((len(rec), 4), dtype=np.int64)
    ev[:, 0] = rec["t"]
    ev[:, 1] = rec["x"]
    ev[:, 2] = rec["y"]
    ev[:, 3] = rec["p"]
    return EventStream(ev, int(width), int(height), int(duration))


def write_events_csv(path: str | Path, stream: EventStream) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t_us,x,y,p\n")
        for t, x, y, p in stream.events:
            fh.write(f"{t},{x},{y},{p}\n")


def read_events_csv(
    path: str | Path, width: int, height: int, duration_us: int | None = None
) -> EventStream:
    """CSV adapter; geometry comes from the caller, duration defaults to
    max timestamp + 1."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "t_us,x,y,p":
            raise FormatError(f"{path}: expected header 't_us,x,y,p', got {header!r}")
        for ln in fh:
            ln = ln.strip()
            if ln:
                t, x, y, p = ln.split(",")
                rows.append((int(t), int(x), int(y), int(p)))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    if duration_us is None:
        duration_us = int(arr[:, 0].max()) + 1 if len(arr) else 1
    return EventStream(arr, width, height, duration_us)


_EVENT_READERS: dict[str, Callable[..., EventStream]] = {}


def register_event_reader(suffix: str, reader: Callable[..., EventStream]) -> None:
    """Hook for third-party dataset decoders keyed by file suffix."""
    _EVENT_READERS[suffix.lower()] = reader


def load_events(path: str | Path, **kwargs) -> EventStream:
    suffix = Path(path).suffix.lower()
    if suffix == ".evb1":
        return read_evb1(path)
    if suffix == ".csv":
        return read_events_csv(path, **kwargs)
    if suffix in _EVENT_READERS:
        return _EVENT_READERS[suffix](path, **kwargs)
    raise FormatError(f"no event reader for {suffix!r} files")


# ---------------------------------------------------------------------------
# split and tensor files

def write_split(path: str | Path, split: LabelSplit) -> None:
    doc = {
        "mode": split.mode,
        "ratio": split.ratio,
        "seed": split.seed,
        "kept": {k: list(v) for k, v in sorted(split.kept.items())},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=0) + "\n", encoding="utf-8")


def read_split(path: str | Path) -> LabelSplit:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return LabelSplit(
            mode=doc["mode"],
            ratio=float(doc["ratio"]),
            kept={k: [int(t) for t in v] for k, v in doc["kept"].items()},
            seed=int(doc["seed"]),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: split file missing key {exc}") from exc


def save_histograms(path: str | Path, hists: Iterable[Histogram]) -> None:
    hists = list(hists)
    if not hists:
        raise InvalidInputError("no histograms to save")
    np.savez(
        path,
        data=np.stack([h.data for h in hists]),
        window_us=np.array([hists[0].window_us]),
        bins=np.array([hists[0].bins]),
        saturation=np.array([hists[0].saturation]),
        partial=np.array([h.partial for h in hists]),
    )


def load_predictions(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-anchor predictions from .npz (arrays) or .json (nested lists)."""
    p = Path(path)
    if p.suffix == ".npz":
        data = np.load(p)
        return (
            np.asarray(data["p_obj"], dtype=float),
            np.asarray(data["p_iou"], dtype=float),
            np.asarray(data["delta"], dtype=float),
        )
    if p.suffix == ".json":
        doc = json.loads(p.read_text(encoding="utf-8"))
        return (
            np.asarray(doc["p_obj"], dtype=float),
            np.asarray(doc["p_iou"], dtype=float),
            np.asarray(doc["delta"], dtype=float),
        )
    raise FormatError(f"unsupported prediction file type {p.suffix!r}")
