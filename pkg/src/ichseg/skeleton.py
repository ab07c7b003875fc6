"""Binary skeletonization via Zhang-Suen two-subiteration thinning."""

from __future__ import annotations

import numpy as np


def _neighbors(img: np.ndarray):
    """P2..P9 of every interior pixel, clockwise starting north."""
    p2 = img[:-2, 1:-1]
    p3 = img[:-2, 2:]
    p4 = img[1:-1, 2:]
    p5 = img[2:, 2:]
    p6 = img[2:, 1:-1]
    p7 = img[2:, :-2]
    p8 = img[1:-1, :-2]
    p9 = img[:-2, :-2]
    return p2, p3, p4, p5, p6, p7, p8, p9


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Thin a binary mask to a 1-pixel-wide skeleton.

    The skeleton is always a subset of the input, and every 8-connected
    component keeps at least one pixel (isolated pixels and endpoints are
    never deleted). Note the classic endpoint rule: thin rectangles reduce
    to their middle row/column with the two extreme pixels trimmed.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"expected 2D mask, got shape {mask.shape}")
    # Pad so border pixels get the same treatment as interior ones.
    img = np.pad(mask, 1).astype(np.uint8)

    while True:
        changed = False
        for step in (0, 1):
            p2, p3, p4, p5, p6, p7, p8, p9 = _neighbors(img)
            ring = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
            b = sum(ring[:-1])
            a = sum(((ring[i] == 0) & (ring[i + 1] == 1)) for i in range(8))
            if step == 0:
                cond = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                cond = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            remove = (img[1:-1, 1:-1] == 1) & (b >= 2) & (b <= 6) & (a == 1) & cond
            if remove.any():
                img[1:-1, 1:-1][remove] = 0
                changed = True
        if not changed:
            break
    return img[1:-1, 1:-1].astype(bool)
