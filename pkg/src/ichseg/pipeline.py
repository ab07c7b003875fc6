"""End-to-end orchestration: detect -> perturb -> cluster -> prompt ->
segment -> vote -> evaluate, with deterministic per-slice seeding."""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import detection as det
from . import ensemble as ens
from .config import PipelineConfig
from .data import DatasetIndex, SliceRecord, build_index, load_ct_slice, load_mask
from .metrics import EvaluationReport, SlicePrediction, evaluate_run, read_per_slice_csv
from .prompts import strip_skull
from .windowing import CompositeImage, make_composite


class PipelineError(RuntimeError):
    pass


@dataclass
class RunResult:
    predictions: dict = field(default_factory=dict)  # slice_id -> SlicePrediction
    slice_reports: list = field(default_factory=list)
    failed_slices: list = field(default_factory=list)
    evaluation: EvaluationReport | None = None

    def run_report_dict(self) -> dict:
        return {
            "slices": [r.to_dict() for r in self.slice_reports],
            "failed_slices": self.failed_slices,
        }


def load_slice_pair(rec: SliceRecord, windows):
    ct = load_ct_slice(rec.image_path, slice_id=rec.slice_id,
                       slice_index=rec.slice_index, patient_id=rec.patient_id)
    composite = make_composite(ct, windows or None)
    return ct, composite


def build_detector(config: PipelineConfig, index: DatasetIndex):
    kind = config.detector.kind
    if kind == "stub":
        return det.stub_detector(index, noise=None, seed=config.seed)
    if kind == "fixture":
        return det.FixtureReplayBackend.from_json(config.detector.path)
    if kind == "torchscript":
        from .interchange import TorchScriptDetectorBackend
        return TorchScriptDetectorBackend.from_descriptor(config.detector.path)
    raise PipelineError(f"unknown detector kind {kind!r}")


def make_segmenter_factory(config: PipelineConfig, index: DatasetIndex):
    """Return a zero-arg factory building one segmenter backend per worker."""
    kind = config.segmenter.kind
    if kind == "oracle":
        masks = {}
        for rec in index:
            if rec.mask_path is not None:
                masks[rec.slice_id] = load_mask(rec.mask_path)
        return lambda: ens.OracleBackend(masks_by_slice=masks)
    if kind == "fill-box":
        return lambda: ens.FillBoxBackend()
    if kind == "threshold":
        opts = config.segmenter.options
        return lambda: ens.ThresholdInBoxBackend(
            brain_floor=float(opts.get("brain_floor", 0.5)),
            bone_ceiling=float(opts.get("bone_ceiling", 0.5)),
        )
    if kind == "torchscript":
        from .interchange import TorchScriptSegmenterBackend
        path = config.segmenter.path
        return lambda: TorchScriptSegmenterBackend.from_descriptor(path)
    raise PipelineError(f"unknown segmenter kind {kind!r}")


def _slice_seed(base_seed: int, slice_id: str) -> int:
    # Stable across runs and processes (no builtin hash()).
    digest = sum((i + 1) * b for i, b in enumerate(slice_id.encode("utf-8")))
    return int(np.random.SeedSequence([base_seed, digest]).generate_state(1)[0])


def process_slice(rec: SliceRecord, config: PipelineConfig, detector, segmenter
                  ) -> tuple[SlicePrediction, ens.SliceRunReport]:
    ct, composite = load_slice_pair(rec, config.windows)
    boxes = det.detect(composite, detector, config.conf_threshold)
    decision = det.slice_prediction(boxes)
    # Score for ROC: best confidence with no threshold applied.
    all_boxes = det.detect(composite, detector, 0.0)
    score = max((b.confidence for b in all_boxes), default=0.0)

    variant = ens.VariantKind(config.variant)
    if not boxes:
        mask = np.zeros((composite.height, composite.width), dtype=bool)
        report = ens.SliceRunReport(slice_id=rec.slice_id)
    else:
        stripped, brain_mask = strip_skull(ct)
        mask, report = ens.segment_slice(
            composite, stripped, boxes, variant, segmenter,
            config.perturb, config.sampling,
            seed=_slice_seed(config.seed, rec.slice_id),
            brain_mask=brain_mask, vote_rule=config.vote_rule,
        )
    pred = SlicePrediction(slice_id=rec.slice_id, score=score,
                           positive=decision.positive, mask=mask)
    return pred, report


def run_pipeline(config: PipelineConfig) -> RunResult:
    index = build_index(config.manifest.parent, config.manifest)
    detector = build_detector(config, index)
    segmenter_factory = make_segmenter_factory(config, index)
    result = RunResult()
    local = threading.local()

    def worker(rec: SliceRecord):
        if not hasattr(local, "segmenter"):
            local.segmenter = segmenter_factory()
        return rec, process_slice(rec, config, detector, local.segmenter)

    outputs = {}
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(worker, rec) for rec in index]
            for fut in futures:
                try:
                    rec, out = fut.result()
                    outputs[rec.slice_id] = out
                except Exception as exc:
                    result.failed_slices.append({"error": str(exc)})
    else:
        for rec in index:
            try:
                _, out = worker(rec)
                outputs[rec.slice_id] = out
            except Exception as exc:
                result.failed_slices.append({"slice_id": rec.slice_id, "error": str(exc)})

    # Deterministic assembly order regardless of worker completion order.
    gt_masks = {}
    for rec in index:
        if rec.slice_id in outputs:
            pred, report = outputs[rec.slice_id]
            result.predictions[rec.slice_id] = pred
            result.slice_reports.append(report)
        gt_masks[rec.slice_id] = load_mask(rec.mask_path) if rec.mask_path else None

    baselines = {name: read_per_slice_csv(p) for name, p in config.baselines.items()}
    result.evaluation = evaluate_run(
        index, result.predictions, gt_masks,
        detection_rule=config.detection_rule, baselines=baselines,
    )
    return result


def write_outputs(result: RunResult, config: PipelineConfig) -> Path:
    out = Path(config.output_dir)
    masks_dir = out / "masks"
    masks_dir.mkdir(parents=True, exist_ok=True)
    for slice_id, pred in sorted(result.predictions.items()):
        np.save(masks_dir / f"{slice_id}.npy", pred.mask)
    (out / "run_report.json").write_text(
        json.dumps(result.run_report_dict(), indent=2, sort_keys=True)
    )
    (out / "evaluation.json").write_text(result.evaluation.to_json())
    (out / "evaluation.txt").write_text(result.evaluation.to_table())
    return out


def preprocess(config: PipelineConfig) -> Path:
    """Write one composite per slice (float32 .npy) plus a manifest."""
    index = build_index(config.manifest.parent, config.manifest)
    out = Path(config.output_dir) / "composites"
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in index:
        _, composite = load_slice_pair(rec, config.windows)
        path = out / f"{rec.slice_id}.npy"
        np.save(path, composite.channels.astype(np.float32))
        entries.append({
            "slice_id": rec.slice_id,
            "patient_id": rec.patient_id,
            "slice_index": rec.slice_index,
            "composite": path.name,
            "shape": [3, composite.height, composite.width],
        })
    (out / "manifest.json").write_text(json.dumps(entries, indent=2, sort_keys=True))
    return out
