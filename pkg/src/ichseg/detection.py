"""Bounding-box detection over composite images via pluggable backends.

A backend turns a composite image into raw candidate boxes; `detect` owns
thresholding, clamping to image bounds, and confidence ordering. Subtype is
carried as metadata only and never gates downstream prompting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .data import ICH_SUBTYPES, DatasetIndex
from .windowing import CompositeImage

DEFAULT_CONF_THRESHOLD = 0.25


class DetectionError(RuntimeError):
    """Raised when a backend fails or produces unusable output."""


@dataclass(frozen=True)
class DetBox:
    """One detected box, half-open pixel coordinates [x0,x1) x [y0,y1)."""

    x0: float
    y0: float
    x1: float
    y1: float
    subtype: str
    confidence: float

    def __post_init__(self):
        if self.subtype not in ICH_SUBTYPES:
            raise DetectionError(f"unknown ICH subtype {self.subtype!r}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise DetectionError(f"degenerate box {self.corners}")
        if not 0.0 <= self.confidence <= 1.0:
            raise DetectionError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def int_corners(self) -> tuple[int, int, int, int]:
        """Integer pixel ROI covering the box (floor mins, ceil maxes)."""
        return (
            int(np.floor(self.x0)),
            int(np.floor(self.y0)),
            int(np.ceil(self.x1)),
            int(np.ceil(self.y1)),
        )


@dataclass(frozen=True)
class SliceDetection:
    positive: bool
    score: float
    boxes: tuple[DetBox, ...] = ()


class DetectorBackend(Protocol):
    """Inference entry point; deterministic for fixed input and weights."""

    descriptor: dict

    def infer(self, image: CompositeImage) -> list[DetBox]: ...


def detect(image: CompositeImage, backend: DetectorBackend,
           conf_threshold: float = DEFAULT_CONF_THRESHOLD) -> list[DetBox]:
    """Run the backend, then filter by confidence, clamp, and sort.

    Returned boxes have confidence >= conf_threshold, are clamped to image
    bounds, and are sorted by descending confidence (corner coordinates as
    tie-break for determinism).
    """
    if not 0.0 <= conf_threshold <= 1.0:
        raise DetectionError(f"conf_threshold {conf_threshold} outside [0, 1]")
    try:
        raw = backend.infer(image)
    except DetectionError:
        raise
    except Exception as exc:
        raise DetectionError(f"detector backend failed on {image.ident}: {exc}") from exc

    kept = []
    for box in raw:
        if box.confidence < conf_threshold:
            continue
        x0 = min(max(box.x0, 0.0), image.width)
        y0 = min(max(box.y0, 0.0), image.height)
        x1 = min(max(box.x1, 0.0), image.width)
        y1 = min(max(box.y1, 0.0), image.height)
        if x0 >= x1 or y0 >= y1:
            continue  # box entirely outside the image
        kept.append(DetBox(x0, y0, x1, y1, box.subtype, box.confidence))
    kept.sort(key=lambda b: (-b.confidence, b.x0, b.y0, b.x1, b.y1))
    return kept


def slice_prediction(boxes) -> SliceDetection:
    """Slice-level decision: positive iff any box; score = max confidence."""
    boxes = tuple(sorted(boxes, key=lambda b: (-b.confidence, b.x0, b.y0, b.x1, b.y1)))
    if not boxes:
        return SliceDetection(positive=False, score=0.0, boxes=())
    return SliceDetection(
        positive=True,
        score=max(b.confidence for b in boxes),
        boxes=boxes,
    )


def nms(boxes: list[DetBox], iou_threshold: float = 0.45) -> list[DetBox]:
    """Greedy class-agnostic non-maximum suppression (fallback for backends
    without built-in postprocessing)."""
    ordered = sorted(boxes, key=lambda b: -b.confidence)
    kept: list[DetBox] = []
    for cand in ordered:
        if all(_iou(cand, k) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


def _iou(a: DetBox, b: DetBox) -> float:
    ix = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    area = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter
    return inter / area


@dataclass
class StubDetector:
    """Replays ground-truth boxes from a dataset index with confidence 1.0,
    optionally jittered deterministically per slice."""

    boxes_by_slice: dict[str, list[DetBox]]
    descriptor: dict = field(default_factory=lambda: {"kind": "stub", "classes": list(ICH_SUBTYPES)})

    def infer(self, image: CompositeImage) -> list[DetBox]:
        return list(self.boxes_by_slice.get(image.ident, []))


def stub_detector(index: DatasetIndex, noise=None, seed: int = 0) -> StubDetector:
    """Build a model-free backend from ground-truth annotations.

    `noise` is a PerturbSpec-like object (min_expand_px/max_expand_px); when
    given, each box is expanded by a per-side integer drawn from a generator
    seeded by (seed, slice position, box position), so runs are repeatable.
    """
    boxes_by_slice: dict[str, list[DetBox]] = {}
    for si, rec in enumerate(index):
        out = []
        for bi, gt in enumerate(rec.boxes):
            x0, y0, x1, y1 = gt.corners
            if noise is not None:
                rng = np.random.default_rng(np.random.SeedSequence([seed, si, bi]))
                dx0, dy0, dx1, dy1 = rng.integers(
                    noise.min_expand_px, noise.max_expand_px + 1, size=4
                )
                x0, y0, x1, y1 = x0 - dx0, y0 - dy0, x1 + dx1, y1 + dy1
            out.append(DetBox(x0, y0, x1, y1, gt.subtype, 1.0))
        boxes_by_slice[rec.slice_id] = out
    return StubDetector(boxes_by_slice=boxes_by_slice)


@dataclass
class FixtureReplayBackend:
    """Reads precomputed detections from a JSON file keyed by slice id."""

    boxes_by_slice: dict[str, list[DetBox]]
    descriptor: dict = field(default_factory=lambda: {"kind": "fixture-replay"})

    @classmethod
    def from_json(cls, path) -> "FixtureReplayBackend":
        payload = json.loads(Path(path).read_text())
        table = {}
        for slice_id, entries in payload.items():
            table[slice_id] = [
                DetBox(*e["corners"], subtype=e["subtype"], confidence=e["confidence"])
                for e in entries
            ]
        return cls(boxes_by_slice=table)

    def infer(self, image: CompositeImage) -> list[DetBox]:
        return list(self.boxes_by_slice.get(image.ident, []))
