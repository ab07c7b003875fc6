import json

import numpy as np
import pytest

from ichseg.data import save_ct_slice, save_mask
from ichseg.windowing import CtSlice

HU_AIR = -1024.0
HU_BRAIN = 35.0
HU_LESION = 70.0
HU_BONE = 1200.0


def disk(shape, cy, cx, r):
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def make_phantom(size=64, lesion=True, lesion_center=(32, 36), lesion_r=5):
    """Head phantom: air background, bone ring, brain disk, optional lesion blob.

    Returns (hu array, lesion mask).
    """
    hu = np.full((size, size), HU_AIR)
    c = size // 2
    outer = disk((size, size), c, c, size // 2 - 4)
    inner = disk((size, size), c, c, size // 2 - 8)
    hu[outer] = HU_BONE
    hu[inner] = HU_BRAIN
    mask = np.zeros((size, size), dtype=bool)
    if lesion:
        mask = disk((size, size), *lesion_center, lesion_r) & inner
        hu[mask] = HU_LESION
    return hu, mask


def mask_bbox(mask):
    ys, xs = np.nonzero(mask)
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


@pytest.fixture
def fixture_dataset(tmp_path):
    """Synthetic 2-patient dataset: 4 lesion slices + 2 healthy, with masks,
    annotations CSV, manifest, and a stub-everything pipeline config."""
    root = tmp_path / "data"
    root.mkdir()
    rows = []
    slices = []
    layout = [
        ("p1", 0, True, (30, 34)),
        ("p1", 1, True, (34, 28)),
        ("p1", 2, False, None),
        ("p2", 0, True, (28, 38)),
        ("p2", 1, False, None),
        ("p2", 2, True, (36, 32)),
    ]
    for patient, idx, lesion, center in layout:
        slice_id = f"{patient}_s{idx}"
        hu, mask = make_phantom(lesion=lesion, lesion_center=center or (0, 0))
        ct = CtSlice(pixels=hu, patient_id=patient, slice_index=idx, slice_id=slice_id)
        save_ct_slice(ct, root / f"{slice_id}.png")
        entry = {"id": slice_id, "patient": patient, "slice_index": idx,
                 "image": f"{slice_id}.png"}
        if lesion:
            save_mask(mask, root / f"{slice_id}_mask.png")
            entry["mask"] = f"{slice_id}_mask.png"
            x0, y0, x1, y1 = mask_bbox(mask)
            rows.append(f"{slice_id},IPH,{x0},{y0},{x1},{y1}")
        slices.append(entry)
    (root / "boxes.csv").write_text(
        "slice_id,subtype,x0,y0,x1,y1\n" + "\n".join(rows) + "\n"
    )
    manifest = {"annotations": "boxes.csv", "slices": slices}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))

    config = {
        "manifest": "data/manifest.json",
        "output_dir": "out",
        "seed": 7,
        "variant": "PointBBox",
        "detector": {"kind": "stub"},
        "segmenter": {"kind": "oracle"},
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config, indent=2))
    return {"root": root, "manifest": root / "manifest.json", "config": config_path,
            "tmp": tmp_path}
