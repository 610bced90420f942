"""Command-line frontend tying the pipeline stages together.

Subcommands exchange data through the NDJSON detection format, EVB1 event
files, split JSON, and npz tensor files. Domain errors exit nonzero with a
single machine-readable JSON object on stderr.
"""

from __future__ import annotations

import concurrent.futures
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import formats, synth
from .assign import AnchorGrid, AnchorPrediction, assign as assign_anchors
from .assign import detection_loss, loss_gradient
from .config import CLASS_PROFILES, load_config
from .errors import InvalidInputError, LeodError
from .evaluate import mean_ap, pseudo_label_pr, stopping_decision
from .evrep import build_histograms, hflip_stream, time_flip_stream
from .pipeline import run_round
from .protocol import ssod_split, wsod_split
from .tta import TtaVariant

VARIANT_ORDER = ("identity", "tflip", "hflip", "thflip")


def cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except LeodError as exc:
            click.echo(json.dumps(exc.to_json(), sort_keys=True), err=True)
            sys.exit(2)
        except FileNotFoundError as exc:
            click.echo(
                json.dumps({"error": "invalid-input", "message": str(exc)}, sort_keys=True),
                err=True,
            )
            sys.exit(2)

    return wrapper


@click.group()
def cli():
    """Pseudo-label refinement toolbox for event-camera detection."""


@cli.command("split")
@click.option("--labels", "labels_path", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["wsod", "ssod"]), required=True)
@click.option("--ratio", type=float, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@cli_errors
def split_cmd(labels_path, mode, ratio, seed, out_path):
    """Derive a labeled subset from a fully annotated detection file."""
    df = formats.read_detection_file(labels_path)
    index = df.label_index()
    split = wsod_split(index, ratio) if mode == "wsod" else ssod_split(index, ratio, seed)
    formats.write_split(out_path, split)
    click.echo(json.dumps({"mode": mode, "kept_labels": split.total_kept()}))


@cli.command("histogram")
@click.option("--events", "events_path", required=True, type=click.Path())
@click.option("--window-us", type=int, default=50000, show_default=True)
@click.option("--bins", type=int, default=5, show_default=True)
@click.option("--saturation", type=int, default=255, show_default=True)
@click.option("--width", type=int, default=None, help="sensor width (CSV input only)")
@click.option("--height", type=int, default=None, help="sensor height (CSV input only)")
@click.option("--time-flip", is_flag=True, help="reverse the stream before binning")
@click.option("--hflip", is_flag=True, help="mirror the stream before binning")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@cli_errors
def histogram_cmd(events_path, window_us, bins, saturation, width, height,
                  time_flip, hflip, config_path, out_path):
    """Convert an event file into per-window histogram tensors."""
    kwargs = {}
    if Path(events_path).suffix.lower() == ".csv":
        if width is None or height is None:
            raise InvalidInputError("CSV input needs --width and --height")
        kwargs = {"width": width, "height": height}
    stream = formats.load_events(events_path, **kwargs)
    if time_flip:
        cfg = load_config(config_path)
        stream = time_flip_stream(stream, flip_polarity=cfg["tta"]["flip_polarity"])
    if hflip:
        stream = hflip_stream(stream)
    hists = build_histograms(stream, window_us, bins, saturation)
    formats.save_histograms(out_path, hists)
    click.echo(json.dumps({"windows": len(hists), "events": len(stream)}))


def _read_variant_files(paths: list[str]) -> list[tuple[TtaVariant, list]]:
    dfs = [formats.read_detection_file(p) for p in paths]
    geometry = {(d.width, d.height, d.num_steps) for d in dfs}
    if len(geometry) > 1:
        raise InvalidInputError(f"variant files disagree on geometry: {sorted(geometry)}")
    out = []
    for pos, df in enumerate(dfs):
        key = df.extra.get("variant", VARIANT_ORDER[pos] if pos < 4 else None)
        if key not in VARIANT_ORDER:
            raise InvalidInputError(f"cannot determine TTA variant of {paths[pos]}")
        variant = TtaVariant(
            time_flipped=key in ("tflip", "thflip"),
            h_flipped=key in ("hflip", "thflip"),
            num_timesteps=df.num_steps,
            width=df.width,
        )
        out.append((variant, df, key))
    if len({k for _, _, k in out}) != len(out):
        raise InvalidInputError("duplicate TTA variants in inputs")
    return [(v, d) for v, d, _ in out]


@cli.command("tta-merge")
@click.option("--inputs", "input_paths", required=True, multiple=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@cli_errors
def tta_merge_cmd(input_paths, config_path, out_path):
    """Unflip and NMS-ensemble detection files from flipped runs.

    Inputs follow the order: identity, time-flip, h-flip, time+h-flip;
    a 'variant' header field overrides the positional meaning.
    """
    from .tta import tta_merge

    cfg = load_config(config_path)
    variants = _read_variant_files(list(input_paths))
    if not cfg["tta"]["use_combined"]:
        variants = [
            (v, df) for v, df in variants if not (v.time_flipped and v.h_flipped)
        ]
        if not variants:
            raise InvalidInputError("all inputs were combined variants and tta.use_combined is off")
    ref = variants[0][1]
    merged_records = []
    for seq in sorted({s for _, df in variants for s in df.sequences()}):
        per_variant = [
            (v, [r.box for r in df.records if r.seq == seq and r.src == "det"])
            for v, df in variants
        ]
        frames = tta_merge(per_variant, cfg["nms"]["tau"], class_aware=cfg["nms"]["class_aware"])
        for row in frames:
            merged_records.extend(formats.BoxRecord(seq=seq, box=b, src="det") for b in row)
    out_df = formats.DetectionFile(
        classes=ref.classes, width=ref.width, height=ref.height,
        num_steps=ref.num_steps, records=merged_records,
        extra={"config_digest": cfg.digest, "merged": True},
    )
    formats.write_detection_file(out_path, out_df)
    click.echo(json.dumps({"sequences": len(out_df.sequences()), "boxes": len(merged_records)}))


@cli.command("forge")
@click.option("--dets", "dets_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--gt", "gt_path", type=click.Path(), default=None)
@click.option("--split", "split_path", type=click.Path(), default=None)
@click.option("--round", "round_index", type=int, default=1, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@cli_errors
def forge_cmd(dets_path, config_path, gt_path, split_path, round_index, jobs, out_path):
    """Forge KEEP/IGNORE pseudo labels from (TTA-merged) detections."""
    cfg = load_config(config_path)
    df = formats.read_detection_file(dets_path)
    gt_df = formats.read_detection_file(gt_path) if gt_path else None
    split = formats.read_split(split_path) if split_path else None

    thresholds = cfg.threshold_config()
    tracker_params = cfg.tracker_params()
    inpaint_rule = cfg["tracker"]["inpaint_rule"]
    if inpaint_rule not in ("per_direction", "off"):
        raise InvalidInputError(f"unknown tracker.inpaint_rule {inpaint_rule!r}")
    identity = TtaVariant(False, False, df.num_steps, df.width)

    def forge_one(seq: str):
        boxes = [r.box for r in df.records if r.seq == seq and r.src == "det"]
        gt_map = {}
        labeled = None
        if gt_df is not None:
            gt_map = {seq: gt_df.gt_by_step(seq)}
            if split is not None:
                labeled = {seq: split.kept.get(seq, [])}
        result = run_round(
            {seq: [(identity, boxes)]},
            thresholds,
            tracker_params,
            round_index,
            gt_per_sequence=gt_map or None,
            labeled_steps=labeled,
            tau_nms=cfg["nms"]["tau"],
            class_aware=cfg["nms"]["class_aware"],
            soft_rule=cfg["soft"]["rule"],
            image_size=(df.width, df.height) if cfg["export"]["clamp_boxes"] else None,
            config_digest=cfg.digest,
            with_inpainting=inpaint_rule != "off",
        )
        return result[seq]

    sequences = df.sequences()
    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            label_sets = list(pool.map(forge_one, sequences))
    else:
        label_sets = [forge_one(s) for s in sequences]

    records = []
    for pls in label_sets:
        records.extend(formats.pseudo_records(pls))
    out_df = formats.DetectionFile(
        classes=df.classes, width=df.width, height=df.height, num_steps=df.num_steps,
        records=records,
        extra={"round": round_index, "config_digest": cfg.digest},
    )
    formats.write_detection_file(out_path, out_df)
    keep = sum(1 for r in records if r.cert == "keep" or r.src == "gt")
    click.echo(json.dumps({"sequences": len(sequences), "labels": len(records), "keep": keep}))


def _parse_grid(spec: str) -> AnchorGrid:
    try:
        strides_part, size_part = spec.split("@")
        strides = tuple(int(s) for s in strides_part.split(","))
        h, w = (int(v) for v in size_part.lower().split("x"))
    except ValueError as exc:
        raise InvalidInputError(f"grid spec {spec!r}; expected 'S1,S2,...@HxW'") from exc
    return AnchorGrid.from_image(strides, width=w, height=h)


@cli.command("assign")
@click.option("--labels", "labels_path", required=True, type=click.Path())
@click.option("--grid", "grid_spec", required=True)
@click.option("--preds", "preds_path", type=click.Path(), default=None)
@click.option("--seq", "seq_id", default=None, help="sequence to assign (default: first)")
@click.option("--t", "t_step", type=int, default=None, help="timestep (default: all)")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path(), default=None)
@cli_errors
def assign_cmd(labels_path, grid_spec, preds_path, seq_id, t_step, config_path, out_path, report_path):
    """Compute per-anchor targets and the masked loss for label frames."""
    cfg = load_config(config_path)
    assign_cfg = cfg["assign"]
    grid = _parse_grid(grid_spec)
    df = formats.read_detection_file(labels_path)
    seqs = df.sequences()
    if not seqs:
        raise InvalidInputError("label file contains no records")
    seq = seq_id or seqs[0]
    pls = df.pseudo_label_set(seq)
    steps = [t_step] if t_step is not None else list(range(df.num_steps))

    pred = None
    if preds_path:
        p_obj, p_iou, delta = formats.load_predictions(preds_path)
        pred = AnchorPrediction(p_obj=p_obj, p_iou=p_iou, delta=delta)

    frames_out = []
    report_frames = []
    total = {"total": 0.0, "l_obj": 0.0, "l_cls": 0.0, "l_box": 0.0}
    for t in steps:
        row = pls.labels[t] if t < len(pls.labels) else []
        keep = [pl.box for pl in row if pl.certainty.value == "keep"]
        ign = [pl.box for pl in row if pl.certainty.value == "ignore"]
        result = assign_anchors(
            grid, keep, ign, predictions=pred,
            center_radius=assign_cfg["center_radius"], topk=assign_cfg["topk"],
            strategy=assign_cfg["strategy"],
        )
        frame = {"t": t, "o": result.o, "r": result.r,
                 "matched_class": result.matched_class, "matched_box": result.matched_box}
        if pred is not None:
            loss = detection_loss(pred, result)
            grad = loss_gradient(pred, result)
            frame.update(
                d_p_obj=grad.d_p_obj, d_p_iou=grad.d_p_iou, d_delta=grad.d_delta
            )
            report_frames.append(
                {"t": t, "total": loss.total, "l_obj": loss.l_obj,
                 "l_cls": loss.l_cls, "l_box": loss.l_box}
            )
            for k in total:
                total[k] += getattr(loss, k)
        frames_out.append(frame)

    arrays = {}
    for frame in frames_out:
        t = frame.pop("t")
        for name, arr in frame.items():
            arrays[f"{name}_{t}"] = arr
    arrays["steps"] = np.array(steps)
    np.savez(out_path, **arrays)

    report = {
        "sequence": seq,
        "anchors": grid.num_anchors,
        "frames": report_frames,
        "mean": {k: (v / len(report_frames) if report_frames else 0.0) for k, v in total.items()},
    }
    if report_path:
        Path(report_path).write_text(json.dumps(report, sort_keys=True, indent=1), encoding="utf-8")
    click.echo(json.dumps(report["mean"], sort_keys=True))


@cli.command("eval")
@click.option("--pred", "pred_path", type=click.Path(), default=None)
@click.option("--gt", "gt_path", type=click.Path(), default=None)
@click.option("--mode", type=click.Choice(["pr", "map", "stop"]), default="pr", show_default=True)
@click.option("--split", "split_path", type=click.Path(), default=None)
@click.option("--frames", "frame_mode", type=click.Choice(["skipped", "labeled"]), default="skipped",
              show_default=True, help="annotated timesteps to score in pr mode")
@click.option("--precisions", default=None, help="comma list of per-round precisions (stop mode)")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@cli_errors
def eval_cmd(pred_path, gt_path, mode, split_path, frame_mode, precisions, config_path, out_path):
    """Score pseudo labels or detections against ground truth."""
    cfg = load_config(config_path)
    report: dict = {"mode": mode, "config_digest": cfg.digest}

    if mode == "stop":
        if not precisions:
            raise InvalidInputError("stop mode needs --precisions p1,p2,...")
        values = [float(v) for v in precisions.split(",")]
        report["precisions"] = values
        report["selected_round"] = stopping_decision(values)
    else:
        if not pred_path or not gt_path:
            raise InvalidInputError(f"{mode} mode needs --pred and --gt")
        pred_df = formats.read_detection_file(pred_path)
        gt_df = formats.read_detection_file(gt_path)
        classes = gt_df.classes
        split = formats.read_split(split_path) if split_path else None

        if mode == "pr":
            tau = cfg["eval"]["tau_match"]
            tp = np.zeros(len(classes), dtype=int)
            fp = np.zeros(len(classes), dtype=int)
            fn = np.zeros(len(classes), dtype=int)
            for seq in gt_df.sequences():
                pls = pred_df.pseudo_label_set(seq)
                labeled = split.kept.get(seq, []) if split else None
                pr = pseudo_label_pr(
                    pls,
                    gt_df.gt_by_step(seq),
                    mode="skipped_frames" if frame_mode == "skipped" else "labeled_frames",
                    tau_match=tau,
                    labeled_steps=labeled,
                    num_classes=len(classes),
                )
                for c, point in pr.items():
                    tp[c] += point.tp
                    fp[c] += point.fp
                    fn[c] += point.fn
            per_class = {}
            for c, name in enumerate(classes):
                prec = float(tp[c] / (tp[c] + fp[c])) if tp[c] + fp[c] else 1.0
                rec = float(tp[c] / (tp[c] + fn[c])) if tp[c] + fn[c] else 1.0
                per_class[name] = {"precision": prec, "recall": rec,
                                   "tp": int(tp[c]), "fp": int(fp[c]), "fn": int(fn[c])}
            total_tp, total_fp, total_fn = int(tp.sum()), int(fp.sum()), int(fn.sum())
            report["per_class"] = per_class
            report["precision"] = total_tp / (total_tp + total_fp) if total_tp + total_fp else 1.0
            report["recall"] = total_tp / (total_tp + total_fn) if total_tp + total_fn else 1.0
        else:
            pred_frames, gt_frames = [], []
            for seq in gt_df.sequences():
                gt_steps = gt_df.gt_by_step(seq)
                pred_steps: dict[int, list] = {}
                for r in pred_df.records:
                    if r.seq == seq and r.src != "gt" and r.cert != "ignore":
                        pred_steps.setdefault(r.box.t_step, []).append(r.box)
                for t in sorted(gt_steps):
                    gt_frames.append(gt_steps[t])
                    pred_frames.append(pred_steps.get(t, []))
            per_class_ap, map_value = mean_ap(
                pred_frames, gt_frames,
                eval_filter=cfg.eval_filter(),
                iou_thresholds=cfg.iou_thresholds(),
                num_classes=len(classes),
            )
            report["per_class"] = {
                classes[c]: (None if np.isnan(v) else v) for c, v in per_class_ap.items()
            }
            report["map"] = map_value

    text = json.dumps(report, sort_keys=True, indent=1)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    click.echo(text)


@cli.command("synth")
@click.option("--scenario", "scenario_name", required=True)
@click.option("--seed", type=int, default=None, help="override the scenario's seed")
@click.option("--out", "out_dir", required=True, type=click.Path())
@cli_errors
def synth_cmd(scenario_name, seed, out_dir):
    """Generate a synthetic dataset: events, GT, per-variant detections."""
    library = synth.scenario_library()
    if scenario_name not in library:
        raise InvalidInputError(
            f"unknown scenario {scenario_name!r}; available: {sorted(library)}"
        )
    scenario = library[scenario_name]
    if seed is not None:
        scenario = scenario.with_seed(seed)
    classes = CLASS_PROFILES["gen1"] if scenario.num_classes == 2 else CLASS_PROFILES["1mpx"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    result = synth.generate(scenario)
    formats.write_evb1(out / "events.evb1", result.events)

    gt_records = [
        formats.BoxRecord(seq=scenario.name, box=b, src="gt")
        for frame in result.gt_per_frame
        for b in frame
    ]
    base = dict(
        classes=classes, width=scenario.width, height=scenario.height,
        num_steps=scenario.duration_steps,
    )
    formats.write_detection_file(out / "gt.ndjson", formats.DetectionFile(records=gt_records, **base))

    for variant, boxes in synth.generate_tta(scenario):
        records = [formats.BoxRecord(seq=scenario.name, box=b, src="det") for b in boxes]
        df = formats.DetectionFile(records=records, extra={"variant": variant.key}, **base)
        formats.write_detection_file(out / f"dets_{variant.key}.ndjson", df)

    manifest = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "duration_steps": scenario.duration_steps,
        "width": scenario.width,
        "height": scenario.height,
        "classes": classes,
        "window_us": scenario.window_us,
        "events": len(result.events),
        "gt_boxes": len(gt_records),
    }
    (out / "scenario.json").write_text(json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8")
    click.echo(json.dumps(manifest, sort_keys=True))


def main():
    cli(prog_name="leod")


if __name__ == "__main__":
    main()
