"""Promptable-segmenter ensemble with majority-vote uncertainty rectification.

Each detected box yields N perturbed boxes; every perturbed ROI is
re-clustered to regenerate its own point prompts, the segmenter runs once
per member, and the per-pixel vote decides the final mask.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import numpy as np

from .detection import DetBox
from .prompts import (
    PerturbSpec,
    PromptError,
    PromptSet,
    SamplingConfig,
    cluster_roi,
    generate_prompts,
    perturb_bbox,
    select_lesion_cluster,
)
from .windowing import CompositeImage, CtSlice


class SegmentationError(RuntimeError):
    """Raised for capability mismatches or backend failures."""


class VariantKind(str, Enum):
    BBOX = "BBox"
    POINT = "Point"
    POINT_BBOX = "PointBBox"

    @property
    def uses_box(self) -> bool:
        return self in (VariantKind.BBOX, VariantKind.POINT_BBOX)

    @property
    def uses_points(self) -> bool:
        return self in (VariantKind.POINT, VariantKind.POINT_BBOX)


@dataclass(frozen=True)
class SegmenterCapability:
    accepts_boxes: bool = True
    accepts_points: bool = True


class SegmenterBackend(Protocol):
    capability: SegmenterCapability

    def segment(self, image: CompositeImage, prompt: PromptSet) -> np.ndarray: ...


def segment_one(image: CompositeImage, prompt: PromptSet, variant: VariantKind,
                backend: SegmenterBackend) -> np.ndarray:
    """Run one backend call, withholding prompt fields the variant does not use."""
    if variant.uses_box:
        if prompt.box is None:
            raise SegmentationError(f"variant {variant.value} requires a box prompt")
        if not backend.capability.accepts_boxes:
            raise SegmentationError(f"backend does not accept box prompts ({variant.value})")
    if variant.uses_points:
        if not prompt.positive_points:
            raise SegmentationError(f"variant {variant.value} requires point prompts")
        if not backend.capability.accepts_points:
            raise SegmentationError(f"backend does not accept point prompts ({variant.value})")

    filtered = PromptSet(
        box=prompt.box if variant.uses_box else None,
        positive_points=prompt.positive_points if variant.uses_points else (),
        negative_points=prompt.negative_points if variant.uses_points else (),
    )
    try:
        mask = backend.segment(image, filtered)
    except SegmentationError:
        raise
    except Exception as exc:
        raise SegmentationError(f"segmenter backend failed on {image.ident}: {exc}") from exc
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (image.height, image.width):
        raise SegmentationError(
            f"backend mask shape {mask.shape} != image shape {(image.height, image.width)}"
        )
    return mask


def vote_map(samples) -> np.ndarray:
    """Accumulate per-pixel vote counts across equally sized boolean masks."""
    samples = list(samples)
    if not samples:
        raise SegmentationError("vote_map needs at least one sample")
    shape = samples[0].shape
    counts = np.zeros(shape, dtype=np.int64)
    for m in samples:
        if m.shape != shape:
            raise SegmentationError(f"mask shape mismatch: {m.shape} vs {shape}")
        counts += m.astype(np.int64)
    return counts


def majority_vote(samples, rule: str = "strict") -> np.ndarray:
    """Per-pixel vote over N masks.

    rule="strict" keeps a pixel iff count > N/2 (for N=10 that means >= 6);
    rule="half" relaxes to count >= N/2 for sensitivity studies.
    """
    samples = list(samples)
    counts = vote_map(samples)
    n = len(samples)
    if rule == "strict":
        return counts > n / 2
    if rule == "half":
        return counts >= n / 2
    raise SegmentationError(f"unknown voting rule {rule!r}")


@dataclass
class MemberOutcome:
    member_index: int
    box: tuple[int, int, int, int]
    degraded: bool = False
    note: str = ""


@dataclass
class BoxRunReport:
    box: tuple[float, float, float, float]
    n_members: int
    members: list[MemberOutcome] = field(default_factory=list)
    vote_histogram: list[int] = field(default_factory=list)
    final_pixels: int = 0

    def to_dict(self) -> dict:
        return {
            "box": list(self.box),
            "n_members": self.n_members,
            "degraded_members": [m.member_index for m in self.members if m.degraded],
            "notes": [m.note for m in self.members if m.note],
            "vote_histogram": self.vote_histogram,
            "final_pixels": self.final_pixels,
        }


@dataclass
class SliceRunReport:
    slice_id: str
    boxes: list[BoxRunReport] = field(default_factory=list)
    failed_boxes: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "slice_id": self.slice_id,
            "boxes": [b.to_dict() for b in self.boxes],
            "failed_boxes": self.failed_boxes,
        }


def _member_prompt(image, hu_slice, pbox, variant, sampling, member_seed,
                   brain_mask) -> tuple[PromptSet, bool, str]:
    """Build the prompt set for one ensemble member.

    Returns (prompt, degraded, note); point-bearing variants degrade to
    box-only prompting when the ROI cannot be clustered.
    """
    if not variant.uses_points:
        return PromptSet(box=pbox, positive_points=()), False, ""
    cluster_seed, sample_seed = (
        int(s) for s in np.random.SeedSequence(member_seed).generate_state(2)
    )
    try:
        cmap = cluster_roi(image, hu_slice, pbox, k=sampling.k, seed=cluster_seed,
                           brain_mask=brain_mask)
        lesion = select_lesion_cluster(cmap, sampling.bone_saturation_threshold)
        prompt = generate_prompts(cmap, lesion, sampling, seed=sample_seed)
        return dataclasses.replace(prompt, box=pbox), False, ""
    except PromptError as exc:
        return PromptSet(box=pbox, positive_points=()), True, str(exc)


def run_variant(image: CompositeImage, hu_slice: CtSlice, box: DetBox,
                variant: VariantKind, backend: SegmenterBackend,
                spec: PerturbSpec, sampling: SamplingConfig, seed: int = 0,
                brain_mask: np.ndarray | None = None,
                report: BoxRunReport | None = None) -> list[np.ndarray]:
    """Produce the N-member mask ensemble for one detected box.

    Member i segments perturbed box i with its freshly regenerated prompt
    set; all randomness derives from `seed` so runs repeat exactly.
    """
    perturbed = perturb_bbox(
        box.int_corners(),
        dataclasses.replace(spec, seed=seed),
        (image.width, image.height),
    )
    masks = []
    failures = []
    for i, pbox in enumerate(perturbed):
        member_seed = [seed, 1 + i]
        prompt, degraded, note = _member_prompt(
            image, hu_slice, pbox, variant, sampling, member_seed, brain_mask
        )
        member_variant = variant
        if degraded:
            # Degenerate ROI: fall back to box-only prompting for this member.
            member_variant = VariantKind.BBOX
        try:
            masks.append(segment_one(image, prompt, member_variant, backend))
            if report is not None:
                report.members.append(
                    MemberOutcome(member_index=i, box=pbox, degraded=degraded, note=note)
                )
        except SegmentationError as exc:
            failures.append(f"member {i}: {exc}")
    if not masks:
        raise SegmentationError(
            f"all {len(perturbed)} ensemble members failed for box {box.corners}: "
            + "; ".join(failures)
        )
    if failures and report is not None:
        for msg in failures:
            report.members.append(MemberOutcome(member_index=-1, box=(0, 0, 0, 0),
                                                degraded=True, note=msg))
    return masks


def segment_slice(image: CompositeImage, hu_slice: CtSlice, boxes,
                  variant: VariantKind, backend: SegmenterBackend,
                  spec: PerturbSpec, sampling: SamplingConfig, seed: int = 0,
                  brain_mask: np.ndarray | None = None,
                  vote_rule: str = "strict") -> tuple[np.ndarray, SliceRunReport]:
    """Segment every detected box on a slice and unite the final masks."""
    report = SliceRunReport(slice_id=image.ident)
    final = np.zeros((image.height, image.width), dtype=bool)
    boxes = list(boxes)
    n_failed = 0
    for bi, box in enumerate(boxes):
        box_seed = int(np.random.SeedSequence([seed, 1000 + bi]).generate_state(1)[0])
        box_report = BoxRunReport(box=box.corners, n_members=spec.count)
        try:
            masks = run_variant(image, hu_slice, box, variant, backend, spec,
                                sampling, seed=box_seed, brain_mask=brain_mask,
                                report=box_report)
        except SegmentationError as exc:
            n_failed += 1
            report.failed_boxes.append({"box": list(box.corners), "error": str(exc)})
            continue
        counts = vote_map(masks)
        box_final = majority_vote(masks, rule=vote_rule)
        box_report.vote_histogram = [
            int((counts == v).sum()) for v in range(len(masks) + 1)
        ]
        box_report.final_pixels = int(box_final.sum())
        report.boxes.append(box_report)
        final |= box_final
    if boxes and n_failed == len(boxes):
        raise SegmentationError(
            f"every box on slice {image.ident} failed: {report.failed_boxes}"
        )
    return final, report


# ---------------------------------------------------------------------------
# Stub backends for tests and model-free runs


@dataclass
class FillBoxBackend:
    """Fills the prompt box; point-only prompts fill nothing beyond a 1-px
    dot at each positive point."""

    capability: SegmenterCapability = field(default_factory=SegmenterCapability)

    def segment(self, image, prompt):
        mask = np.zeros((image.height, image.width), dtype=bool)
        if prompt.box is not None:
            x0, y0, x1, y1 = prompt.box
            mask[y0:y1, x0:x1] = True
        for x, y in prompt.positive_points:
            mask[y, x] = True
        return mask


@dataclass
class ThresholdInBoxBackend:
    """True where brain-channel > lo and bone-channel < hi inside the prompt
    box (or the positive points' bounding region when no box is given)."""

    brain_floor: float = 0.5
    bone_ceiling: float = 0.5
    capability: SegmenterCapability = field(default_factory=SegmenterCapability)

    def segment(self, image, prompt):
        region = np.zeros((image.height, image.width), dtype=bool)
        if prompt.box is not None:
            x0, y0, x1, y1 = prompt.box
            region[y0:y1, x0:x1] = True
        elif prompt.positive_points:
            xs = [p[0] for p in prompt.positive_points]
            ys = [p[1] for p in prompt.positive_points]
            pad = 8
            region[max(0, min(ys) - pad):max(ys) + pad,
                   max(0, min(xs) - pad):max(xs) + pad] = True
        keep = (image.channel("brain") > self.brain_floor) & \
               (image.channel("bone") < self.bone_ceiling)
        return region & keep


@dataclass
class OracleBackend:
    """Replays ground-truth masks (clipped to the prompt box when present);
    the identity backend for end-to-end pipeline checks."""

    masks_by_slice: dict[str, np.ndarray]
    clip_to_box: bool = True
    capability: SegmenterCapability = field(default_factory=SegmenterCapability)

    def segment(self, image, prompt):
        gt = self.masks_by_slice.get(image.ident)
        if gt is None:
            return np.zeros((image.height, image.width), dtype=bool)
        mask = gt.astype(bool).copy()
        if self.clip_to_box and prompt.box is not None:
            region = np.zeros_like(mask)
            x0, y0, x1, y1 = prompt.box
            region[y0:y1, x0:x1] = True
            mask &= region
        return mask


@dataclass
class RecordingBackend:
    """Wraps another backend and records every prompt it receives."""

    inner: SegmenterBackend
    received: list[PromptSet] = field(default_factory=list)

    @property
    def capability(self) -> SegmenterCapability:
        return self.inner.capability

    def segment(self, image, prompt):
        self.received.append(prompt)
        return self.inner.segment(image, prompt)
