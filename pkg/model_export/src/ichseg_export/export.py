"""One-time export of detector / promptable-segmenter checkpoints.

Checkpoints are TorchScript modules saved by the training framework:

  detector:  forward(image: f32[1,3,H,W]) -> f32[N,6] rows (x0,y0,x1,y1,conf,cls)
  segmenter: a module with `encoder` and `decoder` submodules following the
             interchange graph contracts (see ichseg.interchange).

Export re-serializes the graphs next to a JSON descriptor whose checksum
covers the weight tensor bytes, then proves parity on the shipped fixtures
by running the original in-memory module against the re-loaded graphs
through the ichseg adapters. Parity failure aborts the export and removes
any files already written.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
import torch

from ichseg.data import ICH_SUBTYPES
from ichseg.interchange import (
    TorchScriptDetectorBackend,
    TorchScriptSegmenterBackend,
    weights_checksum,
)
from ichseg.prompts import PromptSet
from ichseg.windowing import CompositeImage

from .fixtures import FIXTURE_DIR, ParityFixture, load_fixtures

BOX_IOU_MIN = 0.99
MASK_IOU_MIN = 0.99
CONF_TOL = 1e-3


class ExportError(RuntimeError):
    """Raised for unloadable checkpoints and parity failures."""


def _load_checkpoint(path) -> torch.jit.ScriptModule:
    path = Path(path)
    if not path.exists():
        raise ExportError(f"{path}: no such checkpoint")
    try:
        module = torch.jit.load(str(path), map_location="cpu")
    except Exception as exc:
        raise ExportError(f"{path}: failed to load checkpoint: {exc}") from exc
    module.eval()
    return module


def _input_tensor(composite: CompositeImage, input_size) -> torch.Tensor:
    h, w = int(input_size[0]), int(input_size[1])
    t = torch.from_numpy(np.ascontiguousarray(composite.channels)).float().unsqueeze(0)
    return torch.nn.functional.interpolate(t, size=(h, w), mode="bilinear",
                                           align_corners=False)


def _box_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)
    return inter / union if union > 0 else 1.0


def _mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = int((a | b).sum())
    return int((a & b).sum()) / union if union else 1.0


def _write_descriptor(path: Path, desc: dict) -> None:
    path.write_text(json.dumps(desc, sort_keys=True, indent=2) + "\n")


def _source_detector_boxes(module, fixture: ParityFixture, input_size):
    composite = fixture.composite
    with torch.no_grad():
        raw = module(_input_tensor(composite, input_size)).numpy()
    sx = composite.width / input_size[1]
    sy = composite.height / input_size[0]
    return [(x0 * sx, y0 * sy, x1 * sx, y1 * sy, float(conf))
            for x0, y0, x1, y1, conf, _ in raw if conf > 0 and x1 > x0 and y1 > y0]


def check_detector_parity(module, backend: TorchScriptDetectorBackend,
                          fixtures: list[ParityFixture]) -> None:
    input_size = tuple(int(v) for v in backend.descriptor["input_size"])
    for fixture in fixtures:
        source = _source_detector_boxes(module, fixture, input_size)
        exported = backend.infer(fixture.composite)
        if len(source) != len(exported):
            raise ExportError(
                f"{fixture.name}: box count mismatch "
                f"(source {len(source)}, exported {len(exported)})"
            )
        for sx0, sy0, sx1, sy1, sconf in source:
            best = max(exported, key=lambda b: _box_iou((sx0, sy0, sx1, sy1),
                                                        (b.x0, b.y0, b.x1, b.y1)))
            iou = _box_iou((sx0, sy0, sx1, sy1), (best.x0, best.y0, best.x1, best.y1))
            if iou < BOX_IOU_MIN:
                raise ExportError(f"{fixture.name}: box IoU {iou:.4f} < {BOX_IOU_MIN}")
            if abs(best.confidence - sconf) > CONF_TOL:
                raise ExportError(
                    f"{fixture.name}: confidence drift "
                    f"{abs(best.confidence - sconf):.2e} > {CONF_TOL:.0e}"
                )


def _source_segmenter_mask(module, fixture: ParityFixture, input_size,
                           prompt: PromptSet) -> np.ndarray:
    composite = fixture.composite
    in_h, in_w = input_size
    sx = in_w / composite.width
    sy = in_h / composite.height
    t = _input_tensor(composite, input_size)
    if prompt.box is not None:
        x0, y0, x1, y1 = prompt.box
        box = torch.tensor([x0 * sx, y0 * sy, x1 * sx, y1 * sy]).float()
        has_box = torch.ones(1)
    else:
        box = torch.zeros(4)
        has_box = torch.zeros(1)
    pts = list(prompt.positive_points) + list(prompt.negative_points)
    labels = [1.0] * len(prompt.positive_points) + [0.0] * len(prompt.negative_points)
    points = torch.tensor([[x * sx, y * sy] for x, y in pts],
                          dtype=torch.float32).reshape(-1, 2)
    with torch.no_grad():
        logits = module.decoder(module.encoder(t), box, has_box, points,
                                torch.tensor(labels, dtype=torch.float32))
    mask_small = logits.numpy() > 0.0
    ys = np.clip((np.arange(composite.height) + 0.5) * sy, 0, in_h - 1).astype(int)
    xs = np.clip((np.arange(composite.width) + 0.5) * sx, 0, in_w - 1).astype(int)
    return mask_small[np.ix_(ys, xs)]


def _fixture_prompts(fixture: ParityFixture) -> list[PromptSet]:
    return [
        PromptSet(box=fixture.box, positive_points=fixture.positive_points,
                  negative_points=fixture.negative_points),
        PromptSet(box=None, positive_points=fixture.positive_points,
                  negative_points=fixture.negative_points),  # point-only
    ]


def check_segmenter_parity(module, backend: TorchScriptSegmenterBackend,
                           fixtures: list[ParityFixture]) -> None:
    input_size = tuple(int(v) for v in backend.descriptor["input_size"])
    for fixture in fixtures:
        for prompt in _fixture_prompts(fixture):
            source = _source_segmenter_mask(module, fixture, input_size, prompt)
            exported = backend.segment(fixture.composite, prompt)
            iou = _mask_iou(source, exported)
            if iou < MASK_IOU_MIN:
                raise ExportError(
                    f"{fixture.name}: mask IoU {iou:.4f} < {MASK_IOU_MIN} "
                    f"({'box+points' if prompt.box else 'points only'})"
                )


def _abort(written: list[Path], exc: Exception):
    for p in written:
        p.unlink(missing_ok=True)
    raise exc


def export_detector(checkpoint, out_dir, input_size=(64, 64),
                    class_names=None, fixture_dir=FIXTURE_DIR) -> Path:
    """Export a detector checkpoint; returns the descriptor path."""
    module = _load_checkpoint(checkpoint)
    if class_names is None:
        class_names = list(getattr(module, "class_names", ICH_SUBTYPES))
    if len(class_names) != 5:
        warnings.warn(
            f"detector has {len(class_names)} classes, expected 5; "
            "descriptor records the actual list", stacklevel=2,
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    graph_path = out_dir / "detector.pt"
    module.save(str(graph_path))
    desc = {
        "kind": "detector",
        "graph": graph_path.name,
        "input_size": [int(input_size[0]), int(input_size[1])],
        "class_names": list(class_names),
        "checksum": weights_checksum(dict(module.state_dict())),
    }
    desc_path = out_dir / "detector.json"
    _write_descriptor(desc_path, desc)
    written = [graph_path, desc_path]
    try:
        backend = TorchScriptDetectorBackend.from_descriptor(desc_path)
        check_detector_parity(module, backend, load_fixtures(fixture_dir))
    except ExportError as exc:
        _abort(written, ExportError(f"detector export aborted: {exc}"))
    return desc_path


def export_segmenter(checkpoint, out_dir, input_size=(64, 64),
                     fixture_dir=FIXTURE_DIR) -> Path:
    """Export an encoder/decoder segmenter checkpoint; returns the descriptor path."""
    module = _load_checkpoint(checkpoint)
    for part in ("encoder", "decoder"):
        if not hasattr(module, part):
            raise ExportError(f"{checkpoint}: checkpoint has no {part!r} submodule")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    enc_path = out_dir / "encoder.pt"
    dec_path = out_dir / "decoder.pt"
    module.encoder.save(str(enc_path))
    module.decoder.save(str(dec_path))
    desc = {
        "kind": "segmenter",
        "encoder_graph": enc_path.name,
        "decoder_graph": dec_path.name,
        "embedding": "decoder consumes the encoder output tensor unchanged",
        "input_size": [int(input_size[0]), int(input_size[1])],
        "encoder_checksum": weights_checksum(dict(module.encoder.state_dict())),
        "decoder_checksum": weights_checksum(dict(module.decoder.state_dict())),
    }
    desc_path = out_dir / "segmenter.json"
    _write_descriptor(desc_path, desc)
    written = [enc_path, dec_path, desc_path]
    try:
        backend = TorchScriptSegmenterBackend.from_descriptor(desc_path)
        check_segmenter_parity(module, backend, load_fixtures(fixture_dir))
    except ExportError as exc:
        _abort(written, ExportError(f"segmenter export aborted: {exc}"))
    return desc_path
