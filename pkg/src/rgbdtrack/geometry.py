"""Pinhole camera model, rigid transforms and depth-to-colour registration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .parallel import run_rows

WIDTH = 640
HEIGHT = 480

# Depth frames store this value for pixels without a usable measurement.
INVALID = 0.0


class InvalidInputError(ValueError):
    pass


class BehindCameraError(ValueError):
    pass


class SynchronizationError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < WIDTH and 0 <= self.cy < HEIGHT):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside the image")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.fx, self.fy, self.cx, self.cy)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> Intrinsics:
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """Rigid transform ``p -> rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation has determinant != 1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Extrinsics:
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> Extrinsics:
        return Extrinsics(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: Extrinsics) -> Extrinsics:
        """Transform applying ``other`` first, then ``self``."""
        return Extrinsics(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an ``(..., 3)`` array of points."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Extrinsics:
        return cls(np.array(d["rotation"], dtype=float), np.array(d["translation"], dtype=float))


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> Extrinsics:
    """Camera-to-world transform for a camera at ``position`` aimed at ``target``.

    Camera axes follow the image convention: x right, y down, z forward.
    """
    c = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - c
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise ValueError("viewing direction is parallel to the up vector")
    right /= norm
    down = np.cross(forward, right)
    rot = np.column_stack([right, down, forward])
    # re-orthonormalise to clear rounding before the strict validation
    u, _, vt = np.linalg.svd(rot)
    return Extrinsics(u @ vt, c)


@dataclass(frozen=True, eq=False)
class CameraModel:
    ir: Intrinsics
    rgb: Intrinsics
    ir_to_rgb: Extrinsics = field(default_factory=Extrinsics.identity)
    camera_to_world: Extrinsics = field(default_factory=Extrinsics.identity)
    width: int = WIDTH
    height: int = HEIGHT
    # Compatibility mode: reproject into the colour image with the IR intrinsics.
    project_with_ir_intrinsics: bool = False

    def __post_init__(self):
        if (self.width, self.height) != (WIDTH, HEIGHT):
            raise ValueError(f"image size must be {WIDTH}x{HEIGHT}, got {self.width}x{self.height}")

    @property
    def color_intrinsics(self) -> Intrinsics:
        return self.ir if self.project_with_ir_intrinsics else self.rgb

    def to_dict(self) -> dict:
        return {
            "ir": self.ir.to_dict(),
            "rgb": self.rgb.to_dict(),
            "ir_to_rgb": self.ir_to_rgb.to_dict(),
            "camera_to_world": self.camera_to_world.to_dict(),
            "width": self.width,
            "height": self.height,
            "project_with_ir_intrinsics": self.project_with_ir_intrinsics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CameraModel:
        return cls(
            ir=Intrinsics.from_dict(d["ir"]),
            rgb=Intrinsics.from_dict(d["rgb"]),
            ir_to_rgb=Extrinsics.from_dict(d["ir_to_rgb"]),
            camera_to_world=Extrinsics.from_dict(d["camera_to_world"]),
            width=int(d.get("width", WIDTH)),
            height=int(d.get("height", HEIGHT)),
            project_with_ir_intrinsics=bool(d.get("project_with_ir_intrinsics", False)),
        )


def kinect_camera(camera_to_world: Extrinsics | None = None, **kw) -> CameraModel:
    """Camera with typical factory Kinect parameters."""
    return CameraModel(
        ir=Intrinsics(580.0, 580.0, 319.5, 239.5),
        rgb=Intrinsics(525.0, 525.0, 319.5, 239.5),
        ir_to_rgb=Extrinsics(np.eye(3), np.array([-0.025, 0.0, 0.0])),
        camera_to_world=camera_to_world or Extrinsics.identity(),
        **kw,
    )


@dataclass(frozen=True)
class DepthFrame:
    data: np.ndarray  # (height, width) metres, INVALID where unusable
    timestamp: int

    @property
    def valid(self) -> np.ndarray:
        return self.data > 0


@dataclass(frozen=True)
class ColorFrame:
    data: np.ndarray  # (height, width, 3) uint8 RGB
    timestamp: int


# -- point operations ------------------------------------------------------


def backproject(u: float, v: float, z: float, k: Intrinsics) -> np.ndarray:
    if not (np.isfinite(z) and z > 0):
        raise InvalidInputError(f"depth must be positive and finite, got {z}")
    return np.array([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])


def project(p, k: Intrinsics) -> tuple[float, float]:
    x, y, z = (float(c) for c in p)
    if not z > 0:
        raise BehindCameraError(f"point has non-positive depth {z}")
    return x * k.fx / z + k.cx, y * k.fy / z + k.cy


def transform_point(p, e: Extrinsics) -> np.ndarray:
    return e.rotation @ np.asarray(p, dtype=float) + e.translation


# -- registration ----------------------------------------------------------


@njit(nogil=True, cache=True)
def _register_rows(depth, color, ir, rot, trans, cint, points, colors, pix, valid, r0, r1):
    h, w = depth.shape
    fx, fy, cx, cy = ir[0], ir[1], ir[2], ir[3]
    gfx, gfy, gcx, gcy = cint[0], cint[1], cint[2], cint[3]
    for v in range(r0, r1):
        for u in range(w):
            z = depth[v, u]
            valid[v, u] = False
            if not z > 0:
                continue
            x = (u - cx) * z / fx
            y = (v - cy) * z / fy
            px = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + trans[0]
            py = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + trans[1]
            pz = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + trans[2]
            if not pz > 0:
                continue
            cu = np.floor(px * gfx / pz + gcx + 0.5)
            cv = np.floor(py * gfy / pz + gcy + 0.5)
            if cu < 0 or cu >= w or cv < 0 or cv >= h:
                continue
            iu = int(cu)
            iv = int(cv)
            points[v, u, 0] = x
            points[v, u, 1] = y
            points[v, u, 2] = z
            colors[v, u, 0] = color[iv, iu, 0]
            colors[v, u, 1] = color[iv, iu, 1]
            colors[v, u, 2] = color[iv, iu, 2]
            pix[v, u, 0] = iu
            pix[v, u, 1] = iv
            valid[v, u] = True


@dataclass(frozen=True)
class PointCloud:
    """Registered cloud stored densely on the depth pixel grid.

    ``points`` are IR-camera coordinates, ``colors`` the sampled RGB values and
    ``color_pixels`` the (u, v) colour-image pixel each depth pixel mapped to.
    Only entries where ``valid`` is set are meaningful.
    """

    points: np.ndarray
    colors: np.ndarray
    color_pixels: np.ndarray
    valid: np.ndarray
    timestamp: int

    def __len__(self) -> int:
        return int(self.valid.sum())

    @property
    def positions(self) -> np.ndarray:
        return self.points[self.valid]

    @property
    def point_colors(self) -> np.ndarray:
        return self.colors[self.valid]

    @property
    def source_pixels(self) -> np.ndarray:
        """(u, v) depth pixel of every point."""
        v, u = np.nonzero(self.valid)
        return np.column_stack([u, v])

    def color_image(self) -> np.ndarray:
        """Colour image aligned with the depth grid; black where no point exists."""
        # registration leaves unmatched entries at zero
        return self.colors

    def records(self) -> list[dict]:
        src = self.source_pixels
        return [
            {"position": p, "color": tuple(int(c) for c in col), "source_pixel": (int(s[0]), int(s[1]))}
            for p, col, s in zip(self.positions, self.point_colors, src)
        ]


def register_frame(
    depth: DepthFrame, color: ColorFrame, cam: CameraModel, threads: int | None = None
) -> PointCloud:
    if depth.timestamp != color.timestamp:
        raise SynchronizationError(
            f"depth frame {depth.timestamp} and colour frame {color.timestamp} are not synchronised"
        )
    d = np.ascontiguousarray(depth.data, dtype=np.float64)
    c = np.ascontiguousarray(color.data, dtype=np.uint8)
    h, w = d.shape
    points = np.zeros((h, w, 3))
    colors = np.zeros((h, w, 3), dtype=np.uint8)
    pix = np.full((h, w, 2), -1, dtype=np.int32)
    valid = np.zeros((h, w), dtype=np.bool_)
    e = cam.ir_to_rgb
    run_rows(
        _register_rows,
        (
            d,
            c,
            np.array(cam.ir.as_tuple()),
            np.ascontiguousarray(e.rotation),
            np.ascontiguousarray(e.translation),
            np.array(cam.color_intrinsics.as_tuple()),
            points,
            colors,
            pix,
            valid,
        ),
        h,
        threads,
    )
    return PointCloud(points, colors, pix, valid, depth.timestamp)
