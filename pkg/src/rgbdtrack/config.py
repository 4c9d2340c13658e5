"""Scenario configuration: dataclasses plus a versioned JSON format with field-level errors."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .markers import HsvRange
from .simulator import SensorProfile, trajectory_from_dict

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass(frozen=True)
class CameraConfig:
    position: tuple[float, float, float]
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    profile: SensorProfile = field(default_factory=SensorProfile)


@dataclass(frozen=True)
class FilterConfig:
    q_accel: float = 1.0
    r_pos: float = 0.01
    theta: float = 1e-3
    alpha: float = 1.0
    m1: float = 1.0
    m2: float = 0.0
    n_scale: float = 1e-3
    s1: float = 1.0
    s2: float = 1.0
    epsilon: float = 1e-8
    form: str = "consistent"

    def __post_init__(self):
        for name in ("r_pos", "alpha", "s1", "s2", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name}: must be positive")
        for name in ("q_accel", "theta", "m1", "m2", "n_scale"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name}: must be non-negative")
        if self.form not in ("consistent", "legacy"):
            raise ValueError("form: must be 'consistent' or 'legacy'")


@dataclass(frozen=True)
class PixelFilterConfig:
    enabled: bool = True
    P0: float = 1.0
    measurement_scale: float = 1.0
    process_scale: float = 1.0
    reset_after: int = 5

    def __post_init__(self):
        if not (self.P0 > 0 and self.measurement_scale > 0):
            raise ValueError("P0 and measurement_scale: must be positive")
        if self.process_scale < 0 or self.reset_after < 0:
            raise ValueError("process_scale and reset_after: must be non-negative")


@dataclass(frozen=True)
class CorrectionConfig:
    enabled: bool = True
    degree: int = 8
    samples: int = 2000

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree: must be non-negative")
        if self.samples < self.degree + 1:
            raise ValueError("samples: must exceed the polynomial degree")


@dataclass(frozen=True)
class SegmentationConfig:
    rear: HsvRange = HsvRange((40.0, 80.0), (0.5, 1.0), (0.5, 1.0))
    front: HsvRange = HsvRange((280.0, 320.0), (0.5, 1.0), (0.5, 1.0))
    kernel_radius: int = 1
    min_area: int | None = None

    def __post_init__(self):
        if self.kernel_radius < 1:
            raise ValueError("kernel_radius: must be >= 1")


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "adaptive"
    kappa: float = 1.0
    raw_distance: bool = False
    filter: str = "rf"

    def __post_init__(self):
        if self.mode not in ("naive", "fast", "pk", "adaptive"):
            raise ValueError("mode: must be one of naive, fast, pk, adaptive")
        if self.filter not in ("raw", "kf", "rf"):
            raise ValueError("filter: must be one of raw, kf, rf")
        if self.kappa < 0:
            raise ValueError("kappa: must be non-negative")


@dataclass(frozen=True)
class Occlusion:
    """Markers hidden from ``camera`` for frames ``start <= k < end``."""

    camera: int
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError("start/end: need 0 <= start < end")


@dataclass(frozen=True)
class ScenarioConfig:
    cameras: tuple[CameraConfig, ...]
    trajectory: dict = field(default_factory=lambda: {"type": "subcircular"})
    frames: int = 600
    dt: float = 1.0 / 30.0
    seed: int = 0
    filter: FilterConfig = field(default_factory=FilterConfig)
    pixel_filter: PixelFilterConfig = field(default_factory=PixelFilterConfig)
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    occlusions: tuple[Occlusion, ...] = ()
    scene: dict = field(default_factory=dict)
    threads: int | None = None
    version: int = CONFIG_VERSION

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise ConfigError("cameras: at least one camera is required")
        if self.frames < 1:
            raise ConfigError("frames: must be >= 1")
        if not self.dt > 0:
            raise ConfigError("dt: must be positive")
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"version: unsupported config version {self.version}, expected {CONFIG_VERSION}")
        for i, occ in enumerate(self.occlusions):
            if not 0 <= occ.camera < len(self.cameras):
                raise ConfigError(f"occlusions[{i}].camera: no camera {occ.camera}")
        try:
            trajectory_from_dict(self.trajectory)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"trajectory: {exc}") from exc
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads: must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["segmentation"] = {
            **d["segmentation"],
            "rear": self.segmentation.rear.to_dict(),
            "front": self.segmentation.front.to_dict(),
        }
        return _jsonable(d)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _build(cls, d, path: str, **override):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object, got {type(d).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")
    kwargs = {**d, **override}
    for k, v in kwargs.items():
        if isinstance(v, list):
            kwargs[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(d: dict) -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ConfigError("<root>: expected an object")
    if "version" not in d:
        raise ConfigError("version: missing")
    if "cameras" not in d or not isinstance(d["cameras"], list):
        raise ConfigError("cameras: expected a list")
    cams = []
    for i, c in enumerate(d["cameras"]):
        path = f"cameras[{i}]"
        if not isinstance(c, dict):
            raise ConfigError(f"{path}: expected an object")
        prof = _build(SensorProfile, c.get("profile", {}), f"{path}.profile")
        for key in ("position", "target"):
            if key in c and (not isinstance(c[key], list) or len(c[key]) != 3):
                raise ConfigError(f"{path}.{key}: expected three numbers")
        cams.append(_build(CameraConfig, {k: v for k, v in c.items() if k != "profile"}, path, profile=prof))
    seg = dict(d.get("segmentation", {}))
    seg_over = {}
    for key in ("rear", "front"):
        if key in seg:
            try:
                seg_over[key] = HsvRange.from_dict(seg.pop(key))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"segmentation.{key}: {exc}") from exc
    sub = {
        "filter": _build(FilterConfig, d.get("filter", {}), "filter"),
        "pixel_filter": _build(PixelFilterConfig, d.get("pixel_filter", {}), "pixel_filter"),
        "correction": _build(CorrectionConfig, d.get("correction", {}), "correction"),
        "segmentation": _build(SegmentationConfig, seg, "segmentation", **seg_over),
        "fusion": _build(FusionConfig, d.get("fusion", {}), "fusion"),
        "occlusions": tuple(
            _build(Occlusion, o, f"occlusions[{i}]") for i, o in enumerate(d.get("occlusions", []))
        ),
    }
    rest = {k: v for k, v in d.items() if k not in sub and k != "cameras"}
    known = {f.name for f in fields(ScenarioConfig)}
    for k in rest:
        if k not in known:
            raise ConfigError(f"{k}: unknown field")
    for key, typ in (("frames", int), ("seed", int)):
        if key in rest and (not isinstance(rest[key], int) or isinstance(rest[key], bool)):
            raise ConfigError(f"{key}: expected an integer")
    try:
        return ScenarioConfig(cameras=tuple(cams), **sub, **rest)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<file>: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(d)
