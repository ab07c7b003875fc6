"""Operator CLI: preprocess, detect, segment, run, evaluate, overlay,
export-index.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 partial
(some slices failed).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import detection as det
from . import pipeline as pipe
from .config import ConfigError, load_config
from .data import DatasetError, build_index, load_mask
from .metrics import MetricsError, evaluate_run, read_per_slice_csv, write_per_slice_csv
from .overlay import render_overlay, save_overlay

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3

VALIDATION_ERRORS = (ConfigError, DatasetError, MetricsError, ValueError)


def _load(config_path, overrides):
    config = load_config(config_path)
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    return config


def _fail(exc, code):
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Weakly supervised ICH segmentation pipeline."""


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
def preprocess(config_path):
    """Write composite window images for every slice in the dataset."""
    try:
        config = _load(config_path, {})
        out = pipe.preprocess(config)
    except VALIDATION_ERRORS as exc:
        _fail(exc, EXIT_VALIDATION)
    except Exception as exc:
        _fail(exc, EXIT_RUNTIME)
    click.echo(f"composites written to {out}")


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Detections JSON output path (default: <output_dir>/detections.json)")
def detect(config_path, out_path):
    """Run detection only; write per-slice boxes as JSON."""
    try:
        config = _load(config_path, {})
        index = build_index(config.manifest.parent, config.manifest)
        backend = pipe.build_detector(config, index)
        payload = {}
        for rec in index:
            _, composite = pipe.load_slice_pair(rec, config.windows)
            boxes = det.detect(composite, backend, config.conf_threshold)
            payload[rec.slice_id] = [
                {"corners": list(b.corners), "subtype": b.subtype,
                 "confidence": b.confidence}
                for b in boxes
            ]
    except VALIDATION_ERRORS as exc:
        _fail(exc, EXIT_VALIDATION)
    except Exception as exc:
        _fail(exc, EXIT_RUNTIME)
    out = Path(out_path) if out_path else Path(config.output_dir) / "detections.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True))
    click.echo(f"detections written to {out}")


def _run_impl(config_path, variant, seed):
    overrides = {}
    if variant is not None:
        overrides["variant"] = variant
    if seed is not None:
        overrides["seed"] = seed
    config = _load(config_path, overrides)
    result = pipe.run_pipeline(config)
    out = pipe.write_outputs(result, config)
    return config, result, out


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--variant", type=click.Choice(["BBox", "Point", "PointBBox"]), default=None)
@click.option("--seed", type=int, default=None)
def run(config_path, variant, seed):
    """Full pipeline: detect, prompt, segment, vote, evaluate."""
    try:
        config, result, out = _run_impl(config_path, variant, seed)
    except VALIDATION_ERRORS as exc:
        _fail(exc, EXIT_VALIDATION)
    except Exception as exc:
        _fail(exc, EXIT_RUNTIME)
    write_per_slice_csv(result.evaluation, Path(out) / "per_slice_scores.csv")
    click.echo(result.evaluation.to_table(config.variant))
    click.echo(f"outputs written to {out}")
    if result.failed_slices:
        click.echo(f"{len(result.failed_slices)} slice(s) failed", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--variant", type=click.Choice(["BBox", "Point", "PointBBox"]), default=None)
@click.option("--seed", type=int, default=None)
def segment(config_path, variant, seed):
    """Run the pipeline and write masks without printing the evaluation."""
    try:
        _, result, out = _run_impl(config_path, variant, seed)
    except VALIDATION_ERRORS as exc:
        _fail(exc, EXIT_VALIDATION)
    except Exception as exc:
        _fail(exc, EXIT_RUNTIME)
    click.echo(f"masks written to {out}/masks")
    if result.failed_slices:
        sys.exit(EXIT_PARTIAL)


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--masks-dir", type=click.Path(exists=True), required=True,
              help="Directory of per-slice <slice_id>.npy masks to evaluate.")
@click.option("--scores", type=click.Path(exists=True), default=None,
              help="Optional detections JSON for slice-level scores.")
def evaluate(config_path, masks_dir, scores):
    """Evaluate precomputed masks against the dataset's ground truth."""
    try:
        config = _load(config_path, {})
        index = build_index(config.manifest.parent, config.manifest)
        score_table = {}
        if scores:
            payload = json.loads(Path(scores).read_text())
            for slice_id, boxes in payload.items():
                score_table[slice_id] = max(
                    (b["confidence"] for b in boxes), default=0.0
                )
        from .metrics import SlicePrediction
        predictions = {}
        for rec in index:
            mask_path = Path(masks_dir) / f"{rec.slice_id}.npy"
            if not mask_path.exists():
                continue
            mask = np.load(mask_path)
            score = score_table.get(rec.slice_id, float(mask.any()))
            predictions[rec.slice_id] = SlicePrediction(
                slice_id=rec.slice_id, score=score,
                positive=bool(mask.any()) if not score_table else score >= config.conf_threshold,
                mask=mask,
            )
        gt_masks = {
            rec.slice_id: load_mask(rec.mask_path) if rec.mask_path else None
            for rec in index
        }
        baselines = {name: read_per_slice_csv(p) for name, p in config.baselines.items()}
        report = evaluate_run(index, predictions, gt_masks,
                              detection_rule=config.detection_rule, baselines=baselines)
    except VALIDATION_ERRORS as exc:
        _fail(exc, EXIT_VALIDATION)
    except Exception as exc:
        _fail(exc, EXIT_RUNTIME)
    click.echo(report.to_table())


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.argument("slice_id")
@click.option("--mask", "mask_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
def overlay(config_path, slice_id, mask_path, out_path):
    """Render a qualitative overlay (boxes, contours, prompt points)."""
    try:
        config = _load(config_path, {})
        index = build_index(config.manifest.parent, config.manifest)
        rec = index.get(slice_id)
        _, composite = pipe.load_slice_pair(rec, config.windows)
        pred_mask = np.load(mask_path) if mask_path else None
        gt_mask = load_mask(rec.mask_path) if rec.mask_path else None
        rgb = render_overlay(composite, pred_mask=pred_mask, gt_mask=gt_mask,
                             boxes=rec.boxes)
        save_overlay(rgb, out_path)
    except KeyError as exc:
        _fail(f"unknown slice id {exc}", EXIT_VALIDATION)
    except VALIDATION_ERRORS as exc:
        _fail(exc, EXIT_VALIDATION)
    except Exception as exc:
        _fail(exc, EXIT_RUNTIME)
    click.echo(f"overlay written to {out_path}")


@main.command("export-index")
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None)
def export_index(config_path, out_path):
    """Serialize the resolved dataset index as JSON."""
    try:
        config = _load(config_path, {})
        index = build_index(config.manifest.parent, config.manifest)
    except VALIDATION_ERRORS as exc:
        _fail(exc, EXIT_VALIDATION)
    except Exception as exc:
        _fail(exc, EXIT_RUNTIME)
    text = index.to_json()
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"index written to {out_path}")
    else:
        click.echo(text)


if __name__ == "__main__":
    main()
