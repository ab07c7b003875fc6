"""Pipeline configuration: one JSON file capturing every run parameter.

Validation is total: every invalid field is reported with its JSON path in
a single error before any work starts. Paths are resolved relative to the
config file's location; ICHSEG_OUTPUT_DIR overrides the output directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .prompts import PerturbSpec, PromptError, SamplingConfig
from .windowing import DEFAULT_WINDOWS, WINDOW_NAMES, WindowingError, WindowSpec

VARIANTS = ("BBox", "Point", "PointBBox")
DETECTOR_KINDS = ("stub", "fixture", "torchscript")
SEGMENTER_KINDS = ("oracle", "fill-box", "threshold", "torchscript")


class ConfigError(ValueError):
    pass


@dataclass
class BackendConfig:
    kind: str
    path: Path | None = None
    options: dict = field(default_factory=dict)


@dataclass
class PipelineConfig:
    manifest: Path
    output_dir: Path
    seed: int = 0
    windows: tuple[WindowSpec, ...] = ()
    perturb: PerturbSpec = field(default_factory=PerturbSpec)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    variant: str = "PointBBox"
    conf_threshold: float = 0.25
    vote_rule: str = "strict"
    detection_rule: str = "detector"
    detector: BackendConfig = field(default_factory=lambda: BackendConfig(kind="stub"))
    segmenter: BackendConfig = field(default_factory=lambda: BackendConfig(kind="oracle"))
    baselines: dict = field(default_factory=dict)
    workers: int = 1
    source_path: Path | None = None


def _window_specs(raw: dict, errors: list) -> tuple[WindowSpec, ...]:
    specs = []
    for name in WINDOW_NAMES:
        block = raw.get(name, {})
        level = block.get("level", DEFAULT_WINDOWS[name][0])
        width = block.get("width", DEFAULT_WINDOWS[name][1])
        try:
            specs.append(WindowSpec(name, float(level), float(width)))
        except (WindowingError, TypeError, ValueError) as exc:
            errors.append(f"windows.{name}: {exc}")
    for name in raw:
        if name not in WINDOW_NAMES:
            errors.append(f"windows.{name}: unknown window name")
    return tuple(specs)


def _backend(raw: dict, kinds, base: Path, key: str, errors: list) -> BackendConfig:
    kind = raw.get("kind", kinds[0])
    if kind not in kinds:
        errors.append(f"{key}.kind: {kind!r} not one of {kinds}")
        kind = kinds[0]
    path = None
    if raw.get("path"):
        path = base / raw["path"]
        if not path.exists():
            errors.append(f"{key}.path: {path} does not exist")
    elif kind in ("fixture", "torchscript"):
        errors.append(f"{key}.path: required for kind {kind!r}")
    options = {k: v for k, v in raw.items() if k not in ("kind", "path")}
    return BackendConfig(kind=kind, path=path, options=options)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    base = path.parent
    errors: list[str] = []

    manifest = base / raw.get("manifest", "")
    if not raw.get("manifest"):
        errors.append("manifest: required")
    elif not manifest.exists():
        errors.append(f"manifest: {manifest} does not exist")

    out_env = os.environ.get("ICHSEG_OUTPUT_DIR")
    output_dir = Path(out_env) if out_env else base / raw.get("output_dir", "out")

    windows = _window_specs(raw.get("windows", {}), errors)

    try:
        perturb = PerturbSpec(seed=int(raw.get("seed", 0)), **raw.get("perturb", {}))
    except (PromptError, TypeError) as exc:
        errors.append(f"perturb: {exc}")
        perturb = PerturbSpec()
    try:
        sampling = SamplingConfig(**raw.get("sampling", {}))
    except (PromptError, TypeError) as exc:
        errors.append(f"sampling: {exc}")
        sampling = SamplingConfig()

    variant = raw.get("variant", "PointBBox")
    if variant not in VARIANTS:
        errors.append(f"variant: {variant!r} not one of {VARIANTS}")
    conf_threshold = raw.get("conf_threshold", 0.25)
    if not isinstance(conf_threshold, (int, float)) or not 0 <= conf_threshold <= 1:
        errors.append(f"conf_threshold: {conf_threshold!r} must be in [0, 1]")
    vote_rule = raw.get("vote_rule", "strict")
    if vote_rule not in ("strict", "half"):
        errors.append(f"vote_rule: {vote_rule!r} not one of ('strict', 'half')")
    detection_rule = raw.get("detection_rule", "detector")
    if detection_rule not in ("detector", "mask"):
        errors.append(f"detection_rule: {detection_rule!r} not one of ('detector', 'mask')")
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        errors.append(f"workers: {workers!r} must be a positive integer")

    detector = _backend(raw.get("detector", {"kind": "stub"}), DETECTOR_KINDS,
                        base, "detector", errors)
    segmenter = _backend(raw.get("segmenter", {"kind": "oracle"}), SEGMENTER_KINDS,
                         base, "segmenter", errors)

    baselines = {}
    for name, rel in raw.get("baselines", {}).items():
        p = base / rel
        if not p.exists():
            errors.append(f"baselines.{name}: {p} does not exist")
        baselines[name] = p

    if errors:
        raise ConfigError(f"{path}: invalid config:\n  " + "\n  ".join(errors))
    return PipelineConfig(
        manifest=manifest,
        output_dir=output_dir,
        seed=int(raw.get("seed", 0)),
        windows=windows,
        perturb=perturb,
        sampling=sampling,
        variant=variant,
        conf_threshold=float(conf_threshold),
        vote_rule=vote_rule,
        detection_rule=detection_rule,
        detector=detector,
        segmenter=segmenter,
        baselines=baselines,
        workers=workers,
        source_path=path,
    )
