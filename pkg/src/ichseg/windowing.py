"""CT Hounsfield-unit windowing and composite image construction.

Each CT slice is mapped through three standard radiology windows (brain,
subdural, bone) and the results are stacked into a 3-channel [0,1] image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WINDOW_NAMES = ("brain", "subdural", "bone")

# Standard radiology conventions; overridable via config.
DEFAULT_WINDOWS = {
    "brain": (40.0, 80.0),
    "subdural": (80.0, 200.0),
    "bone": (600.0, 2800.0),
}


class WindowingError(ValueError):
    """Raised for invalid window parameters or non-finite HU input."""


@dataclass(frozen=True)
class WindowSpec:
    """One intensity window: level (center) and width, both in HU."""

    name: str
    level: float
    width: float

    def __post_init__(self):
        if self.name not in WINDOW_NAMES:
            raise WindowingError(
                f"unknown window name {self.name!r}; expected one of {WINDOW_NAMES}"
            )
        if not self.width > 0:
            raise WindowingError(f"window {self.name!r}: width must be > 0, got {self.width}")

    @property
    def low(self) -> float:
        return self.level - self.width / 2.0

    @property
    def high(self) -> float:
        return self.level + self.width / 2.0


def default_window_specs() -> tuple[WindowSpec, WindowSpec, WindowSpec]:
    return tuple(WindowSpec(name, *DEFAULT_WINDOWS[name]) for name in WINDOW_NAMES)


@dataclass(frozen=True)
class CtSlice:
    """A single 2D CT slice in Hounsfield units with its identity."""

    pixels: np.ndarray  # 2D float array of HU values
    patient_id: str
    slice_index: int
    pixel_spacing_mm: tuple[float, float] | None = None
    slice_id: str | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise WindowingError(f"CtSlice pixels must be a non-empty 2D array, got shape {px.shape}")
        if self.pixel_spacing_mm is not None:
            sy, sx = self.pixel_spacing_mm
            if not (sy > 0 and sx > 0):
                raise WindowingError(f"pixel spacing must be positive, got {self.pixel_spacing_mm}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def ident(self) -> str:
        if self.slice_id is not None:
            return self.slice_id
        return f"{self.patient_id}/{self.slice_index}"

    def check_finite(self):
        """Reject NaN/Inf HU values, naming the slice and first bad pixel."""
        bad = ~np.isfinite(self.pixels)
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise WindowingError(
                f"slice {self.ident}: non-finite HU value at pixel (x={x}, y={y})"
            )


@dataclass(frozen=True)
class CompositeImage:
    """3-channel [0,1] image: channel 0=brain, 1=subdural, 2=bone."""

    channels: np.ndarray  # (3, H, W) float array in [0, 1]
    patient_id: str
    slice_index: int
    slice_id: str | None = None
    specs: tuple[WindowSpec, ...] = field(default_factory=default_window_specs)

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]

    @property
    def ident(self) -> str:
        if self.slice_id is not None:
            return self.slice_id
        return f"{self.patient_id}/{self.slice_index}"

    def channel(self, name: str) -> np.ndarray:
        return self.channels[WINDOW_NAMES.index(name)]


def apply_window(ct: CtSlice, spec: WindowSpec) -> np.ndarray:
    """Map HU values through one window onto [0, 1] with clamping.

    output = clamp((hu - (level - width/2)) / width, 0, 1)
    """
    ct.check_finite()
    out = (ct.pixels - spec.low) / spec.width
    np.clip(out, 0.0, 1.0, out=out)
    return out


def make_composite(ct: CtSlice, specs=None) -> CompositeImage:
    """Stack brain/subdural/bone windows into one composite image.

    `specs` must contain exactly one WindowSpec per canonical name; defaults
    to the standard windows.
    """
    if specs is None:
        specs = default_window_specs()
    by_name = {s.name: s for s in specs}
    if len(specs) != 3 or sorted(by_name) != sorted(WINDOW_NAMES):
        raise WindowingError(
            f"expected exactly one spec per window {WINDOW_NAMES}, "
            f"got {[s.name for s in specs]}"
        )
    ordered = tuple(by_name[name] for name in WINDOW_NAMES)
    channels = np.stack([apply_window(ct, s) for s in ordered], axis=0)
    return CompositeImage(
        channels=channels,
        patient_id=ct.patient_id,
        slice_index=ct.slice_index,
        slice_id=ct.slice_id,
        specs=ordered,
    )
