"""Dataset ingestion: CT slices, box annotations, masks, and the index.

Canonical interchange for desk-scale work is a 16-bit grayscale PNG plus a
JSON sidecar carrying the HU rescale (slope/intercept) and slice identity.
NIfTI-1 is supported for real data. Coordinates everywhere: x = column,
y = row, origin top-left, boxes half-open [x0,x1) x [y0,y1).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .nifti import NiftiError, read_nifti
from .windowing import CtSlice

ICH_SUBTYPES = ("IVH", "IPH", "SAH", "EDH", "SDH")


class DatasetError(ValueError):
    """Raised for unreadable files, schema violations, or index conflicts."""


@dataclass(frozen=True)
class GroundTruthBox:
    slice_id: str
    subtype: str
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.subtype not in ICH_SUBTYPES:
            raise DatasetError(f"unknown ICH subtype {self.subtype!r}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise DatasetError(
                f"degenerate box ({self.x0},{self.y0},{self.x1},{self.y1}) for slice {self.slice_id}"
            )

    @property
    def corners(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass(frozen=True)
class SliceRecord:
    slice_id: str
    patient_id: str
    slice_index: int
    image_path: Path
    mask_path: Path | None = None
    boxes: tuple[GroundTruthBox, ...] = ()


@dataclass
class DatasetIndex:
    records: list[SliceRecord] = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.slice_id in seen:
                raise DatasetError(f"duplicate slice id {rec.slice_id!r}")
            seen.add(rec.slice_id)
        self.records = sorted(self.records, key=lambda r: (r.patient_id, r.slice_index))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_patient(self) -> dict[str, list[SliceRecord]]:
        groups: dict[str, list[SliceRecord]] = {}
        for rec in self.records:
            groups.setdefault(rec.patient_id, []).append(rec)
        return groups

    def get(self, slice_id: str) -> SliceRecord:
        for rec in self.records:
            if rec.slice_id == slice_id:
                return rec
        raise KeyError(slice_id)

    def to_json(self) -> str:
        payload = [
            {
                "slice_id": r.slice_id,
                "patient_id": r.patient_id,
                "slice_index": r.slice_index,
                "image": str(r.image_path),
                "mask": str(r.mask_path) if r.mask_path else None,
                "boxes": [
                    {"subtype": b.subtype, "corners": list(b.corners)} for b in r.boxes
                ],
            }
            for r in self.records
        ]
        return json.dumps(payload, indent=2, sort_keys=True)


def save_ct_slice(ct: CtSlice, path, intercept: float = -1024.0, slope: float = 1.0):
    """Write a CtSlice as 16-bit PNG + JSON sidecar (stored = (hu - intercept) / slope)."""
    path = Path(path)
    stored = np.round((ct.pixels - intercept) / slope)
    if stored.min() < 0 or stored.max() > 65535:
        raise DatasetError(
            f"{path}: HU range [{ct.pixels.min()}, {ct.pixels.max()}] does not fit "
            f"uint16 with intercept {intercept}, slope {slope}"
        )
    Image.fromarray(stored.astype(np.uint16)).save(path)
    sidecar = {
        "intercept": intercept,
        "slope": slope,
        "patient_id": ct.patient_id,
        "slice_index": ct.slice_index,
        "height": ct.height,
        "width": ct.width,
    }
    if ct.pixel_spacing_mm is not None:
        sidecar["pixel_spacing_mm"] = list(ct.pixel_spacing_mm)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def _load_raster_slice(path: Path, slice_id: str | None) -> CtSlice:
    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        raise DatasetError(f"{path}: missing JSON sidecar {sidecar_path.name}")
    try:
        meta = json.loads(sidecar_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{sidecar_path}: invalid JSON: {exc}") from exc
    try:
        stored = np.asarray(Image.open(path), dtype=np.float64)
    except OSError as exc:
        raise DatasetError(f"{path}: unreadable raster: {exc}") from exc
    if stored.ndim != 2:
        raise DatasetError(f"{path}: expected single-channel raster, got shape {stored.shape}")
    if "height" in meta and (meta["height"], meta["width"]) != stored.shape:
        raise DatasetError(
            f"{path}: raster shape {stored.shape} does not match sidecar "
            f"({meta['height']}, {meta['width']})"
        )
    hu = stored * float(meta.get("slope", 1.0)) + float(meta.get("intercept", 0.0))
    spacing = meta.get("pixel_spacing_mm")
    return CtSlice(
        pixels=hu,
        patient_id=str(meta.get("patient_id", "unknown")),
        slice_index=int(meta.get("slice_index", 0)),
        pixel_spacing_mm=tuple(spacing) if spacing else None,
        slice_id=slice_id,
    )


def _load_nifti_slice(path: Path, slice_id: str | None, slice_index: int,
                      patient_id: str) -> CtSlice:
    try:
        data, info = read_nifti(path)
    except NiftiError as exc:
        raise DatasetError(str(exc)) from exc
    if data.ndim == 2:
        plane = data
    elif data.ndim == 3:
        if not 0 <= slice_index < data.shape[2]:
            raise DatasetError(
                f"{path}: slice index {slice_index} out of range for volume depth {data.shape[2]}"
            )
        plane = data[:, :, slice_index]
    else:
        raise DatasetError(f"{path}: unsupported NIfTI dimensionality {data.ndim}")
    # NIfTI dim1 is x (column); transpose to row-major (y, x).
    plane = np.ascontiguousarray(plane.T)
    if not np.isfinite(plane).all():
        raise DatasetError(f"{path}: non-finite HU values in NIfTI data")
    pixdim = info["pixdim"]
    spacing = (pixdim[1], pixdim[0]) if len(pixdim) >= 2 else None
    return CtSlice(
        pixels=plane,
        patient_id=patient_id,
        slice_index=slice_index,
        pixel_spacing_mm=spacing,
        slice_id=slice_id,
    )


def load_ct_slice(path, format_hint: str | None = None, slice_id: str | None = None,
                  slice_index: int = 0, patient_id: str = "unknown") -> CtSlice:
    """Load one CT slice as HU values.

    format_hint: "raster" (16-bit PNG + sidecar) or "nifti"; inferred from
    the extension when omitted.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    fmt = format_hint
    if fmt is None:
        fmt = "nifti" if path.name.endswith((".nii", ".nii.gz")) else "raster"
    if fmt == "raster":
        return _load_raster_slice(path, slice_id)
    if fmt == "nifti":
        return _load_nifti_slice(path, slice_id, slice_index, patient_id)
    raise DatasetError(f"unknown format hint {fmt!r}")


def load_mask(path, expected_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Load a raster as a boolean mask: any nonzero pixel (any channel) is true."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    try:
        arr = np.asarray(Image.open(path))
    except OSError as exc:
        raise DatasetError(f"{path}: unreadable raster: {exc}") from exc
    mask = arr != 0
    if mask.ndim == 3:
        mask = mask.any(axis=2)
    if expected_shape is not None and mask.shape != tuple(expected_shape):
        raise DatasetError(
            f"{path}: mask shape {mask.shape} does not match slice shape {tuple(expected_shape)}"
        )
    return mask


def save_mask(mask: np.ndarray, path):
    Image.fromarray((np.asarray(mask, dtype=bool) * 255).astype(np.uint8)).save(path)


def load_annotations(csv_path) -> list[GroundTruthBox]:
    """Parse the annotation CSV: slice_id,subtype,x0,y0,x1,y1 with header.

    Rows violating invariants are rejected individually; the error lists the
    offending row numbers.
    """
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise DatasetError(f"{csv_path}: no such file")
    required = ["slice_id", "subtype", "x0", "y0", "x1", "y1"]
    boxes: list[GroundTruthBox] = []
    bad_rows: list[str] = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != required:
            raise DatasetError(
                f"{csv_path}: header must be {','.join(required)}, got {reader.fieldnames}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                boxes.append(
                    GroundTruthBox(
                        slice_id=row["slice_id"].strip(),
                        subtype=row["subtype"].strip(),
                        x0=int(row["x0"]),
                        y0=int(row["y0"]),
                        x1=int(row["x1"]),
                        y1=int(row["y1"]),
                    )
                )
            except (DatasetError, ValueError, TypeError) as exc:
                bad_rows.append(f"row {lineno}: {exc}")
    if bad_rows:
        raise DatasetError(f"{csv_path}: invalid annotation rows: " + "; ".join(bad_rows))
    return boxes


def convert_bhx_annotations(csv_path, out_path):
    """Convert a BHX-style export (SOPInstanceUID, labelName, x, y, width, height)
    to the canonical schema.

    Assumes BHX coordinates use the same top-left origin with x = column;
    verify with an overlay render on a known fixture before trusting a new
    export.
    """
    csv_path, out_path = Path(csv_path), Path(out_path)
    alias = {"Intraventricular": "IVH", "Intraparenchymal": "IPH",
             "Subarachnoid": "SAH", "Epidural": "EDH", "Subdural": "SDH",
             "Chronic": "SDH"}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            label = row["labelName"].strip()
            subtype = alias.get(label, label)
            if subtype not in ICH_SUBTYPES:
                continue
            x, y = float(row["x"]), float(row["y"])
            w, h = float(row["width"]), float(row["height"])
            rows.append(
                [row["SOPInstanceUID"].strip(), subtype,
                 int(round(x)), int(round(y)),
                 int(round(x + w)), int(round(y + h))]
            )
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slice_id", "subtype", "x0", "y0", "x1", "y1"])
        writer.writerows(rows)


def build_index(root, manifest_path) -> DatasetIndex:
    """Build a patient-indexed catalog from a manifest JSON.

    Manifest schema:
      {"annotations": "boxes.csv" (optional),
       "slices": [{"id", "patient", "slice_index", "image", "mask" (optional)}]}
    Paths are relative to the manifest location.
    """
    root = Path(root)
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DatasetError(f"{manifest_path}: no such file")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{manifest_path}: invalid JSON: {exc}") from exc

    base = manifest_path.parent
    boxes_by_slice: dict[str, list[GroundTruthBox]] = {}
    if manifest.get("annotations"):
        for box in load_annotations(base / manifest["annotations"]):
            boxes_by_slice.setdefault(box.slice_id, []).append(box)

    records = []
    dangling = []
    for entry in manifest.get("slices", []):
        slice_id = str(entry["id"])
        image_path = base / entry["image"]
        if not image_path.exists():
            dangling.append(str(image_path))
        mask_path = None
        if entry.get("mask"):
            mask_path = base / entry["mask"]
            if not mask_path.exists():
                dangling.append(str(mask_path))
        records.append(
            SliceRecord(
                slice_id=slice_id,
                patient_id=str(entry["patient"]),
                slice_index=int(entry.get("slice_index", 0)),
                image_path=image_path,
                mask_path=mask_path,
                boxes=tuple(boxes_by_slice.get(slice_id, ())),
            )
        )
    if dangling:
        raise DatasetError(f"{manifest_path}: dangling paths: {', '.join(dangling)}")
    return DatasetIndex(records=records, root=root)
