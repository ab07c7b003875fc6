"""Deterministic qualitative overlays: box outlines, mask contours, point glyphs."""

from __future__ import annotations

import numpy as np
from PIL import Image
from scipy import ndimage

from .windowing import CompositeImage

# Fixed palette (RGB)
COLOR_BOX = (255, 214, 0)
COLOR_PRED = (255, 64, 64)
COLOR_GT = (64, 255, 64)
COLOR_POS = (255, 0, 255)
COLOR_NEG = (64, 128, 255)


class OverlayError(ValueError):
    pass


def _contour(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask
    return mask & ~ndimage.binary_erosion(mask)


def _paint(rgb: np.ndarray, where: np.ndarray, color):
    rgb[where] = color


def _draw_box(rgb: np.ndarray, corners, color):
    h, w = rgb.shape[:2]
    x0, y0, x1, y1 = (int(round(v)) for v in corners)
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(w, x1), min(h, y1)
    if x0 >= x1 or y0 >= y1:
        return
    rgb[y0, x0:x1] = color
    rgb[y1 - 1, x0:x1] = color
    rgb[y0:y1, x0] = color
    rgb[y0:y1, x1 - 1] = color


def _draw_cross(rgb: np.ndarray, x: int, y: int, color, radius: int = 2):
    h, w = rgb.shape[:2]
    if not (0 <= x < w and 0 <= y < h):
        return
    rgb[max(0, y - radius):min(h, y + radius + 1), x] = color
    rgb[y, max(0, x - radius):min(w, x + radius + 1)] = color


def render_overlay(image: CompositeImage, pred_mask=None, gt_mask=None,
                   boxes=(), prompts=()) -> np.ndarray:
    """Render a composite's brain channel with annotations as an RGB array."""
    base = (image.channel("brain") * 255).astype(np.uint8)
    rgb = np.stack([base, base, base], axis=-1)
    h, w = rgb.shape[:2]

    for mask, color in ((gt_mask, COLOR_GT), (pred_mask, COLOR_PRED)):
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (h, w):
                raise OverlayError(f"mask shape {mask.shape} != image shape {(h, w)}")
            _paint(rgb, _contour(mask), color)
    for box in boxes:
        corners = box.corners if hasattr(box, "corners") else box
        _draw_box(rgb, corners, COLOR_BOX)
    for prompt in prompts:
        for x, y in prompt.negative_points:
            _draw_cross(rgb, x, y, COLOR_NEG)
        for x, y in prompt.positive_points:
            _draw_cross(rgb, x, y, COLOR_POS)
    return rgb


def save_overlay(rgb: np.ndarray, path):
    Image.fromarray(rgb).save(path)
