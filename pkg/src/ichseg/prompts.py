"""Prompt generation: skull stripping, box perturbation, tissue clustering,
lesion-cluster selection, and skeleton-based point sampling.

One detected box becomes an ensemble of prompt sets: the box is perturbed
several times, and each perturbed ROI is re-clustered so every ensemble
member gets its own points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .kmeans import kmeans
from .skeleton import skeletonize
from .windowing import CompositeImage, CtSlice

BONE_HU_THRESHOLD = 300.0
STRIPPED_HU = -1024.0


class PromptError(ValueError):
    """Raised for degenerate ROIs or invalid prompt configuration."""


@dataclass(frozen=True)
class PerturbSpec:
    """How to perturb a bounding box: expand each side by 1-4 px, 10 times."""

    count: int = 10
    min_expand_px: int = 1
    max_expand_px: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise PromptError(f"perturbation count must be >= 1, got {self.count}")
        if not 1 <= self.min_expand_px <= self.max_expand_px:
            raise PromptError(
                f"need 1 <= min_expand ({self.min_expand_px}) <= max_expand ({self.max_expand_px})"
            )


@dataclass(frozen=True)
class SamplingConfig:
    """Point-sampling knobs: positives from the lesion skeleton, negatives
    from each other cluster."""

    n_pos: int = 3
    n_neg: int = 1
    k: int = 4
    bone_saturation_threshold: float = 0.95

    def __post_init__(self):
        if self.n_pos < 1 or self.n_neg < 0 or self.k < 2:
            raise PromptError(f"invalid sampling config {self}")


@dataclass(frozen=True)
class ClusterMap:
    """K-means labels over a box ROI plus per-cluster statistics.

    labels uses -1 for stripped / out-of-brain pixels; statistics arrays are
    indexed by cluster id (NaN mean for empty clusters).
    """

    labels: np.ndarray  # (h, w) int, values in {-1, 0..k-1}
    k: int
    box: tuple[int, int, int, int]  # ROI origin in image coordinates
    mean_hu: np.ndarray
    mean_bone: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True)
class PromptSet:
    box: tuple[int, int, int, int] | None
    positive_points: tuple[tuple[int, int], ...]
    negative_points: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if set(self.positive_points) & set(self.negative_points):
            raise PromptError("positive and negative point sets overlap")


def strip_skull(ct: CtSlice, external_mask: np.ndarray | None = None
                ) -> tuple[CtSlice, np.ndarray]:
    """Suppress the skull: return (stripped copy, brain mask).

    Without an external mask, an approximation runs: bone is HU > 300, the
    brain is the largest connected non-bone region inside the filled bone
    hull, hole-filled and eroded by one pixel. With no bone present nothing
    is stripped. An externally produced mask is used verbatim.
    """
    if external_mask is not None:
        mask = np.asarray(external_mask, dtype=bool)
        if mask.shape != ct.pixels.shape:
            raise PromptError(
                f"external mask shape {mask.shape} does not match slice {ct.pixels.shape}"
            )
    else:
        bone = ct.pixels > BONE_HU_THRESHOLD
        if not bone.any():
            mask = np.ones_like(bone)
        else:
            hull = ndimage.binary_fill_holes(bone)
            inside = hull & ~bone
            labels, n = ndimage.label(inside, structure=np.ones((3, 3), dtype=int))
            if n == 0:
                mask = np.zeros_like(bone)
            else:
                sizes = ndimage.sum_labels(inside, labels, index=np.arange(1, n + 1))
                largest = int(np.argmax(sizes)) + 1
                mask = labels == largest
                mask = ndimage.binary_fill_holes(mask)
                mask = ndimage.binary_erosion(mask)

    stripped = ct.pixels.copy()
    stripped[~mask] = STRIPPED_HU
    out = CtSlice(
        pixels=stripped,
        patient_id=ct.patient_id,
        slice_index=ct.slice_index,
        pixel_spacing_mm=ct.pixel_spacing_mm,
        slice_id=ct.slice_id,
    )
    return out, mask


def perturb_bbox(box, spec: PerturbSpec, image_bounds: tuple[int, int]
                 ) -> list[tuple[int, int, int, int]]:
    """Produce spec.count expanded copies of an integer box.

    Each side grows independently by an integer drawn uniformly from
    [min_expand, max_expand]; results are clamped to image bounds. Output
    order is deterministic for a seed.
    """
    x0, y0, x1, y1 = (int(v) for v in box)
    width, height = image_bounds
    if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
        raise PromptError(f"box ({x0},{y0},{x1},{y1}) outside bounds {image_bounds}")
    rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(spec.count):
        left, top, right, bottom = rng.integers(
            spec.min_expand_px, spec.max_expand_px + 1, size=4
        )
        out.append(
            (
                max(0, x0 - int(left)),
                max(0, y0 - int(top)),
                min(width, x1 + int(right)),
                min(height, y1 + int(bottom)),
            )
        )
    return out


def cluster_roi(composite: CompositeImage, hu_slice: CtSlice, box,
                k: int = 4, seed: int = 0,
                brain_mask: np.ndarray | None = None) -> ClusterMap:
    """K-means over the 3-channel composite vectors inside a box ROI.

    hu_slice should be the skull-stripped slice; stripped pixels (those
    outside brain_mask, or at the strip sentinel HU when no mask is given)
    are excluded from clustering. Cluster statistics (mean HU, mean
    bone-channel value, pixel count) are computed afterward for the lesion
    selection rule.
    """
    x0, y0, x1, y1 = (int(v) for v in box)
    if not (0 <= x0 < x1 <= composite.width and 0 <= y0 < y1 <= composite.height):
        raise PromptError(f"box ({x0},{y0},{x1},{y1}) outside image bounds")
    roi = composite.channels[:, y0:y1, x0:x1]
    hu_roi = hu_slice.pixels[y0:y1, x0:x1]
    if brain_mask is not None:
        usable = brain_mask[y0:y1, x0:x1].astype(bool)
    else:
        usable = hu_roi > STRIPPED_HU
    n_usable = int(usable.sum())
    if n_usable < k:
        raise PromptError(
            f"ROI ({x0},{y0},{x1},{y1}) has only {n_usable} usable pixels, need >= {k}"
        )
    features = roi[:, usable].T  # (n, 3)
    point_labels, _ = kmeans(features, k, seed=seed)

    labels = np.full(hu_roi.shape, -1, dtype=np.int64)
    labels[usable] = point_labels

    counts = np.zeros(k, dtype=np.int64)
    mean_hu = np.full(k, np.nan)
    mean_bone = np.full(k, np.nan)
    bone_roi = roi[2]
    for j in range(k):
        members = labels == j
        counts[j] = int(members.sum())
        if counts[j]:
            mean_hu[j] = hu_roi[members].mean()
            mean_bone[j] = bone_roi[members].mean()
    return ClusterMap(labels=labels, k=k, box=(x0, y0, x1, y1),
                      mean_hu=mean_hu, mean_bone=mean_bone, counts=counts)


def select_lesion_cluster(cmap: ClusterMap,
                          bone_saturation_threshold: float = 0.95) -> int:
    """Pick the lesion cluster: brightest by mean HU, unless that cluster is
    saturated in the bone window (residual skull), then the second brightest."""
    nonempty = [j for j in range(cmap.k) if cmap.counts[j] > 0]
    if len(nonempty) < 2:
        raise PromptError(
            f"degenerate clustering: only {len(nonempty)} nonempty cluster(s)"
        )
    ranked = sorted(nonempty, key=lambda j: -cmap.mean_hu[j])
    top = ranked[0]
    if cmap.mean_bone[top] >= bone_saturation_threshold:
        return ranked[1]
    return top


def generate_prompts(cmap: ClusterMap, lesion_id: int,
                     config: SamplingConfig = SamplingConfig(),
                     seed: int = 0) -> PromptSet:
    """Sample point prompts from a cluster map, in image coordinates.

    Positives come uniformly without replacement from the skeleton of the
    lesion cluster's mask (falling back to the pixel nearest the cluster
    centroid when the skeleton is empty); one batch of negatives comes from
    each other nonempty cluster.
    """
    if cmap.counts[lesion_id] == 0:
        raise PromptError(f"lesion cluster {lesion_id} is empty")
    rng = np.random.default_rng(seed)
    x0, y0 = cmap.box[0], cmap.box[1]

    lesion_mask = cmap.labels == lesion_id
    skel = skeletonize(lesion_mask)
    skel_pts = np.argwhere(skel)  # (y, x) rows in deterministic scan order
    if len(skel_pts) == 0:
        lesion_pts = np.argwhere(lesion_mask)
        centroid = lesion_pts.mean(axis=0)
        nearest = int(((lesion_pts - centroid) ** 2).sum(axis=1).argmin())
        skel_pts = lesion_pts[nearest : nearest + 1]
    n_pos = min(config.n_pos, len(skel_pts))
    pick = rng.choice(len(skel_pts), size=n_pos, replace=False)
    positives = tuple(
        (x0 + int(px), y0 + int(py)) for py, px in skel_pts[np.sort(pick)]
    )

    negatives = []
    for j in range(cmap.k):
        if j == lesion_id or cmap.counts[j] == 0:
            continue
        pts = np.argwhere(cmap.labels == j)
        n_neg = min(config.n_neg, len(pts))
        pick = rng.choice(len(pts), size=n_neg, replace=False)
        negatives.extend((x0 + int(px), y0 + int(py)) for py, px in pts[np.sort(pick)])

    return PromptSet(
        box=cmap.box,
        positive_points=positives,
        negative_points=tuple(negatives),
    )


@dataclass(frozen=True)
class PromptPipelineConfig:
    perturb: PerturbSpec = field(default_factory=PerturbSpec)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
