"""Model-interchange adapters: exported TorchScript graphs + JSON descriptors.

A descriptor names the graph file(s), input size, normalization, class list
or coordinate transform, and a checksum over the graph's weight tensors.
The checksum is verified on every load, so a descriptor can never silently
point at the wrong weights.

Graph contracts (all coordinates in the graph's input-pixel space):
  detector:  forward(image: f32[1,3,H,W]) -> f32[N,6] rows (x0,y0,x1,y1,conf,class_idx)
  segmenter-encoder: forward(image: f32[1,3,H,W]) -> embedding tensor
  segmenter-decoder: forward(embedding, box: f32[4], has_box: f32[1],
                             points: f32[P,2], labels: f32[P]) -> f32[H,W] logits
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detection import DetBox, DetectionError, nms
from .ensemble import SegmentationError, SegmenterCapability
from .windowing import CompositeImage


class InterchangeError(RuntimeError):
    """Raised for missing runtimes, bad descriptors, or checksum mismatches."""


def _torch():
    try:
        import torch
    except ImportError as exc:  # pragma: no cover
        raise InterchangeError(
            "torch is required for TorchScript interchange backends"
        ) from exc
    return torch


def weights_checksum(state_dict) -> str:
    """sha256 over all weight tensor bytes, in sorted parameter-name order.

    Covers only the numeric payload, so re-exports of the same checkpoint
    produce the same checksum even when file metadata differs.
    """
    h = hashlib.sha256()
    for name in sorted(state_dict.keys()):
        tensor = state_dict[name]
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(tensor.detach().cpu().numpy()).tobytes())
    return h.hexdigest()


def load_graph(graph_path, expected_checksum: str | None = None):
    """torch.jit.load a graph and verify its weights checksum."""
    torch = _torch()
    graph_path = Path(graph_path)
    if not graph_path.exists():
        raise InterchangeError(f"{graph_path}: no such graph file")
    try:
        module = torch.jit.load(str(graph_path), map_location="cpu")
    except Exception as exc:
        raise InterchangeError(f"{graph_path}: failed to load graph: {exc}") from exc
    module.eval()
    if expected_checksum is not None:
        actual = weights_checksum(dict(module.state_dict()))
        if actual != expected_checksum:
            raise InterchangeError(
                f"{graph_path}: weights checksum mismatch "
                f"(descriptor {expected_checksum[:12]}..., file {actual[:12]}...)"
            )
    return module


def load_descriptor(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InterchangeError(f"{path}: no such descriptor")
    try:
        desc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InterchangeError(f"{path}: invalid JSON: {exc}") from exc
    for key in ("kind", "input_size"):
        if key not in desc:
            raise InterchangeError(f"{path}: descriptor missing required key {key!r}")
    desc["_dir"] = str(path.parent)
    return desc


def _to_input_tensor(image: CompositeImage, input_size, normalization):
    torch = _torch()
    h, w = int(input_size[0]), int(input_size[1])
    t = torch.from_numpy(np.ascontiguousarray(image.channels)).float().unsqueeze(0)
    t = torch.nn.functional.interpolate(t, size=(h, w), mode="bilinear",
                                        align_corners=False)
    if normalization:
        mean = torch.tensor(normalization["mean"]).view(1, 3, 1, 1)
        std = torch.tensor(normalization["std"]).view(1, 3, 1, 1)
        t = (t - mean) / std
    return t


@dataclass
class TorchScriptDetectorBackend:
    """Runs an exported detector graph; maps boxes back to original pixels."""

    descriptor: dict
    module: object = None
    apply_nms: bool = False
    iou_threshold: float = 0.45

    @classmethod
    def from_descriptor(cls, descriptor_path) -> "TorchScriptDetectorBackend":
        desc = load_descriptor(descriptor_path)
        if desc["kind"] != "detector":
            raise InterchangeError(f"{descriptor_path}: not a detector descriptor")
        graph = Path(desc["_dir"]) / desc["graph"]
        module = load_graph(graph, desc.get("checksum"))
        return cls(descriptor=desc, module=module,
                   apply_nms=bool(desc.get("needs_nms", False)))

    def infer(self, image: CompositeImage) -> list[DetBox]:
        torch = _torch()
        in_h, in_w = (int(v) for v in self.descriptor["input_size"])
        t = _to_input_tensor(image, (in_h, in_w), self.descriptor.get("normalization"))
        with torch.no_grad():
            raw = self.module(t)
        raw = np.asarray(raw.detach().cpu().numpy(), dtype=np.float64)
        if raw.ndim != 2 or raw.shape[1] != 6:
            raise DetectionError(f"detector graph returned shape {raw.shape}, expected (N, 6)")
        sx = image.width / in_w
        sy = image.height / in_h
        classes = self.descriptor.get("class_names", [])
        boxes = []
        for x0, y0, x1, y1, conf, cls_idx in raw:
            subtype = classes[int(round(cls_idx))] if classes else "IPH"
            if x0 >= x1 or y0 >= y1 or conf <= 0:
                continue
            boxes.append(
                DetBox(x0 * sx, y0 * sy, x1 * sx, y1 * sy, subtype,
                       float(min(max(conf, 0.0), 1.0)))
            )
        if self.apply_nms:
            boxes = nms(boxes, self.iou_threshold)
        return boxes


@dataclass
class TorchScriptSegmenterBackend:
    """Encoder/decoder pair with a one-image embedding cache.

    The embedding is keyed on the image identity, so the 10 ensemble members
    of one slice reuse a single encoder pass.
    """

    descriptor: dict
    encoder: object = None
    decoder: object = None
    capability: SegmenterCapability = field(default_factory=SegmenterCapability)
    _cache: dict = field(default_factory=dict)

    @classmethod
    def from_descriptor(cls, descriptor_path) -> "TorchScriptSegmenterBackend":
        desc = load_descriptor(descriptor_path)
        if desc["kind"] != "segmenter":
            raise InterchangeError(f"{descriptor_path}: not a segmenter descriptor")
        base = Path(desc["_dir"])
        encoder = load_graph(base / desc["encoder_graph"], desc.get("encoder_checksum"))
        decoder = load_graph(base / desc["decoder_graph"], desc.get("decoder_checksum"))
        cap = desc.get("capability", {})
        return cls(descriptor=desc, encoder=encoder, decoder=decoder,
                   capability=SegmenterCapability(
                       accepts_boxes=bool(cap.get("accepts_boxes", True)),
                       accepts_points=bool(cap.get("accepts_points", True)),
                   ))

    def _embed(self, image: CompositeImage):
        torch = _torch()
        key = image.ident
        if key not in self._cache:
            t = _to_input_tensor(image, self.descriptor["input_size"],
                                 self.descriptor.get("normalization"))
            with torch.no_grad():
                self._cache.clear()  # keep at most one image resident
                self._cache[key] = self.encoder(t)
        return self._cache[key]

    def segment(self, image: CompositeImage, prompt) -> np.ndarray:
        torch = _torch()
        in_h, in_w = (int(v) for v in self.descriptor["input_size"])
        sx = in_w / image.width
        sy = in_h / image.height
        embedding = self._embed(image)

        if prompt.box is not None:
            x0, y0, x1, y1 = prompt.box
            box = torch.tensor([x0 * sx, y0 * sy, x1 * sx, y1 * sy]).float()
            has_box = torch.ones(1)
        else:
            box = torch.zeros(4)
            has_box = torch.zeros(1)
        pts = list(prompt.positive_points) + list(prompt.negative_points)
        labels = [1.0] * len(prompt.positive_points) + [0.0] * len(prompt.negative_points)
        points = torch.tensor(
            [[x * sx, y * sy] for x, y in pts], dtype=torch.float32
        ).reshape(-1, 2)
        label_t = torch.tensor(labels, dtype=torch.float32)
        with torch.no_grad():
            logits = self.decoder(embedding, box, has_box, points, label_t)
        logits = np.asarray(logits.detach().cpu().numpy(), dtype=np.float64)
        if logits.shape != (in_h, in_w):
            raise SegmentationError(
                f"decoder returned shape {logits.shape}, expected {(in_h, in_w)}"
            )
        mask_small = logits > 0.0
        # Nearest-neighbor map back to original resolution.
        ys = np.clip((np.arange(image.height) + 0.5) * sy, 0, in_h - 1).astype(int)
        xs = np.clip((np.arange(image.width) + 0.5) * sx, 0, in_w - 1).astype(int)
        return mask_small[np.ix_(ys, xs)]
