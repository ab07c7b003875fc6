"""Shipped parity fixtures: small synthetic head phantoms with prompts.

Each fixture is an .npz holding a Hounsfield-unit slice plus the prompt used
for segmenter parity (bounding box, positive and negative points). The
phantoms are deterministic, so `regenerate()` always reproduces the shipped
files byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ichseg.windowing import CompositeImage, CtSlice, make_composite

FIXTURE_DIR = Path(__file__).parent / "fixtures"
FIXTURE_NAMES = ("phantom_a", "phantom_b", "phantom_c")

# (lesion center y, x, radius) per fixture; everything else is shared.
_LESIONS = {"phantom_a": (32, 36, 6), "phantom_b": (24, 26, 5), "phantom_c": (40, 30, 4)}
_SIZE = 64


@dataclass(frozen=True)
class ParityFixture:
    name: str
    hu: np.ndarray
    box: tuple[int, int, int, int]
    positive_points: tuple[tuple[int, int], ...]
    negative_points: tuple[tuple[int, int], ...]

    @property
    def ct(self) -> CtSlice:
        return CtSlice(pixels=self.hu, patient_id="fixture",
                       slice_index=0, slice_id=self.name)

    @property
    def composite(self) -> CompositeImage:
        return make_composite(self.ct)


def _disk(size: int, cy: int, cx: int, r: int) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2


def _build(name: str) -> ParityFixture:
    cy, cx, r = _LESIONS[name]
    hu = np.full((_SIZE, _SIZE), -1024.0)
    center = _SIZE // 2
    hu[_disk(_SIZE, center, center, 28)] = 1200.0   # skull ring
    hu[_disk(_SIZE, center, center, 24)] = 35.0     # brain
    lesion = _disk(_SIZE, cy, cx, r)
    hu[lesion] = 70.0
    ys, xs = np.nonzero(lesion)
    box = (int(xs.min()) - 2, int(ys.min()) - 2, int(xs.max()) + 3, int(ys.max()) + 3)
    return ParityFixture(
        name=name,
        hu=hu,
        box=box,
        positive_points=((cx, cy), (cx - 1, cy), (cx, cy - 1)),
        negative_points=((center - 20, center - 20),),
    )


def regenerate(out_dir: Path = FIXTURE_DIR) -> list[Path]:
    """Write the fixture .npz files; used once to ship them in-repo."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in FIXTURE_NAMES:
        f = _build(name)
        path = out_dir / f"{name}.npz"
        np.savez(path, hu=f.hu, box=np.array(f.box),
                 positive_points=np.array(f.positive_points),
                 negative_points=np.array(f.negative_points))
        written.append(path)
    return written


def load_fixtures(fixture_dir: Path = FIXTURE_DIR) -> list[ParityFixture]:
    out = []
    for name in FIXTURE_NAMES:
        path = Path(fixture_dir) / f"{name}.npz"
        with np.load(path) as data:
            out.append(ParityFixture(
                name=name,
                hu=data["hu"],
                box=tuple(int(v) for v in data["box"]),
                positive_points=tuple((int(x), int(y))
                                      for x, y in data["positive_points"]),
                negative_points=tuple((int(x), int(y))
                                      for x, y in data["negative_points"]),
            ))
    return out
