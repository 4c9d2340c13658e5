"""Synthetic RGBD camera: Z-level quantised depth with drift, noise and dropout,
plus a colour image of the three markers carried by a moving robot."""

from __future__ import annotations

import colorsys
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from numba import njit

from .geometry import INVALID, CameraModel, ColorFrame, DepthFrame, project
from .parallel import run_rows

MIN_DEPTH = 0.8
MAX_DEPTH = 4.5


@dataclass(frozen=True)
class SensorProfile:
    """Depth-sensor characteristics.

    Noise standard deviation is ``noise_a + noise_b * z**2`` metres. Part of the
    noise (``noise_correlation`` of its variance) is shared by square blocks of
    ``noise_block`` pixels, mimicking the correlation window used for matching.
    ``offset_poly`` holds ascending coefficients of the range over-estimation.
    """

    doff: float = 1090.0
    baseline: float = 0.075
    ir_focal: float = 580.0
    noise_a: float = 0.0
    noise_b: float = 0.0
    noise_block: int = 1
    noise_correlation: float = 0.0
    offset_poly: tuple[float, ...] = ()
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.baseline > 0:
            raise ValueError("baseline must be positive")
        if not self.ir_focal > 0:
            raise ValueError("ir_focal must be positive")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError("dropout_rate must lie in [0, 1]")
        if self.noise_a < 0 or self.noise_b < 0:
            raise ValueError("noise coefficients must be non-negative")
        if self.noise_block < 1:
            raise ValueError("noise_block must be >= 1")
        if not 0.0 <= self.noise_correlation <= 1.0:
            raise ValueError("noise_correlation must lie in [0, 1]")
        object.__setattr__(self, "offset_poly", tuple(float(c) for c in self.offset_poly))

    @property
    def bf(self) -> float:
        return self.baseline * self.ir_focal

    def noise_sigma(self, z):
        return self.noise_a + self.noise_b * np.asarray(z, dtype=float) ** 2

    def offset(self, z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for c in reversed(self.offset_poly):
            out = out * z + c
        return out

    def to_dict(self) -> dict:
        return {
            "doff": self.doff,
            "baseline": self.baseline,
            "ir_focal": self.ir_focal,
            "noise_a": self.noise_a,
            "noise_b": self.noise_b,
            "noise_block": self.noise_block,
            "noise_correlation": self.noise_correlation,
            "offset_poly": list(self.offset_poly),
            "dropout_rate": self.dropout_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SensorProfile:
        d = dict(d)
        if "offset_poly" in d:
            d["offset_poly"] = tuple(d["offset_poly"])
        return cls(**d)


# -- disparity model -------------------------------------------------------


def normalized_disparity(kd, profile: SensorProfile):
    return (profile.doff - np.asarray(kd, dtype=float)) / 8.0


def disparity_to_depth(kd, profile: SensorProfile):
    """Depth of raw disparity ``kd`` (1/8 px units); INVALID where d <= 0."""
    d = normalized_disparity(kd, profile)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(d > 0, profile.bf / np.where(d > 0, d, 1.0), INVALID)
    return z[()] if z.ndim == 0 else z


def depth_to_disparity(z, profile: SensorProfile):
    """Continuous raw disparity that a depth ``z`` would produce."""
    return profile.doff - 8.0 * profile.bf / np.asarray(z, dtype=float)


def nearest_level(z, profile: SensorProfile):
    """Integer raw disparity nearest to ``z``; ties go to the closer depth (smaller raw value)."""
    return np.ceil(depth_to_disparity(z, profile) - 0.5)


def level_depth(kd, doff: float, bf: float):
    return bf / ((doff - np.asarray(kd, dtype=float)) / 8.0)


def quantize_depth(z, profile: SensorProfile):
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise ValueError("quantize_depth needs positive depths")
    out = level_depth(nearest_level(z, profile), profile.doff, profile.bf)
    return out[()] if out.ndim == 0 else out


def level_gap(z, profile: SensorProfile):
    """Spacing between the Z-level at ``z`` and the next farther level."""
    kd = nearest_level(z, profile)
    return level_depth(kd + 1, profile.doff, profile.bf) - level_depth(kd, profile.doff, profile.bf)


# -- scene -----------------------------------------------------------------


class Trajectory(Protocol):
    def pose(self, t: float) -> tuple[np.ndarray, float]: ...


@dataclass(frozen=True)
class SubcircularTrajectory:
    """Loop around ``center`` with a slowly breathing radius and uneven speed."""

    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    radius_wobble: float = 0.15
    period: float = 20.0
    speed_wobble: float = 0.15
    height: float = 0.3
    phase: float = 0.0

    def _polar(self, t):
        w = 2 * np.pi / self.period
        r = self.radius + self.radius_wobble * np.sin(2 * w * t)
        dr = 2 * w * self.radius_wobble * np.cos(2 * w * t)
        phi = self.phase + w * t + self.speed_wobble * np.sin(3 * w * t)
        dphi = w + 3 * w * self.speed_wobble * np.cos(3 * w * t)
        return r, dr, phi, dphi

    def pose(self, t: float) -> tuple[np.ndarray, float]:
        r, dr, phi, dphi = self._polar(t)
        pos = np.array(
            [self.center[0] + r * np.cos(phi), self.center[1] + r * np.sin(phi), self.height]
        )
        vx = dr * np.cos(phi) - r * dphi * np.sin(phi)
        vy = dr * np.sin(phi) + r * dphi * np.cos(phi)
        return pos, float(np.arctan2(vy, vx))

    def to_dict(self) -> dict:
        return {"type": "subcircular", **self.__dict__, "center": list(self.center)}


@dataclass(frozen=True)
class WaypointTrajectory:
    """Smooth (cubic spline) path through timed ``(t, x, y)`` waypoints."""

    waypoints: tuple[tuple[float, float, float], ...]
    height: float = 0.3

    def __post_init__(self):
        from scipy.interpolate import CubicSpline

        w = np.asarray(self.waypoints, dtype=float)
        if w.ndim != 2 or w.shape[1] != 3 or len(w) < 2:
            raise ValueError("waypoints must be a list of at least two (t, x, y) triples")
        if np.any(np.diff(w[:, 0]) <= 0):
            raise ValueError("waypoint times must be strictly increasing")
        object.__setattr__(self, "waypoints", tuple(tuple(r) for r in w))
        object.__setattr__(self, "_spline", CubicSpline(w[:, 0], w[:, 1:], bc_type="clamped"))

    def pose(self, t: float) -> tuple[np.ndarray, float]:
        t0, t1 = self.waypoints[0][0], self.waypoints[-1][0]
        tc = min(max(t, t0), t1)
        xy = self._spline(tc)
        vel = self._spline(tc, 1)
        if np.hypot(*vel) < 1e-9:
            # stationary at an end point: keep the heading of the neighbouring segment
            vel = self._spline(min(max(tc, t0 + 1e-3), t1 - 1e-3), 1)
        return np.array([xy[0], xy[1], self.height]), float(np.arctan2(vel[1], vel[0]))

    def to_dict(self) -> dict:
        return {"type": "waypoints", "waypoints": [list(w) for w in self.waypoints], "height": self.height}


def trajectory_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type", "subcircular")
    if kind == "subcircular":
        if "center" in d:
            d["center"] = tuple(d["center"])
        return SubcircularTrajectory(**d)
    if kind == "waypoints":
        return WaypointTrajectory(tuple(tuple(w) for w in d["waypoints"]), d.get("height", 0.3))
    raise ValueError(f"unknown trajectory type {kind!r}")


def hsv_to_rgb255(hsv) -> np.ndarray:
    h, s, v = hsv
    return np.round(np.array(colorsys.hsv_to_rgb((h % 360.0) / 360.0, s, v)) * 255).astype(np.uint8)


def _hsv_distance(a, b) -> float:
    dh = abs(a[0] - b[0]) % 360.0
    dh = min(dh, 360.0 - dh) / 180.0
    return float(np.sqrt(dh**2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2))


@dataclass(frozen=True)
class Scene:
    trajectory: Trajectory
    # front, left, right marker offsets in the robot frame (x forward, z up)
    marker_layout: tuple = ((0.12, 0.0, 0.0), (-0.06, 0.10, 0.0), (-0.06, -0.10, 0.0))
    marker_radius: float = 0.035
    marker_color: tuple = (60.0, 0.9, 0.9)
    front_color: tuple = (300.0, 0.9, 0.9)
    background_color: tuple = (210.0, 0.25, 0.55)
    plate_radius: float = 0.22
    volume: tuple = ((-2.0, -2.0, 0.0), (2.0, 2.0, 3.0))
    dt: float = 1.0 / 30.0
    min_color_margin: float = 0.2

    def __post_init__(self):
        m = np.asarray(self.marker_layout, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("marker_layout must hold three 3-vectors")
        if np.linalg.norm(np.cross(m[1] - m[0], m[2] - m[0])) < 1e-6:
            raise ValueError("marker offsets are collinear")
        for name in ("marker_color", "front_color"):
            if _hsv_distance(getattr(self, name), self.background_color) <= self.min_color_margin:
                raise ValueError(f"{name} is too close to the background colour")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def robot_pose(self, frame: int) -> tuple[np.ndarray, float]:
        return self.trajectory.pose(frame * self.dt)

    def marker_positions(self, frame: int) -> np.ndarray:
        pos, yaw = self.robot_pose(frame)
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return np.asarray(self.marker_layout, dtype=float) @ rot.T + pos


@dataclass
class GroundTruthLog:
    frames: list[int] = field(default_factory=list)
    poses: list[np.ndarray] = field(default_factory=list)  # (x, y, z, yaw)
    markers: list[np.ndarray] = field(default_factory=list)  # (3, 3) world positions

    def append(self, frame: int, position, yaw: float, markers) -> None:
        self.frames.append(int(frame))
        self.poses.append(np.array([*position, yaw], dtype=float))
        self.markers.append(np.asarray(markers, dtype=float))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p[:3] for p in self.poses]).reshape(-1, 3)

    @property
    def yaws(self) -> np.ndarray:
        return np.array([p[3] for p in self.poses])

    HEADER = ["frame", "x", "y", "z", "yaw"] + [f"m{i}_{a}" for i in range(3) for a in "xyz"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.HEADER)
            for f, p, m in zip(self.frames, self.poses, self.markers):
                w.writerow([f, *(repr(float(x)) for x in p), *(repr(float(x)) for x in m.ravel())])

    @classmethod
    def from_csv(cls, path) -> GroundTruthLog:
        log = cls()
        with open(Path(path), newline="") as fh:
            for row in csv.DictReader(fh):
                vals = [float(row[k]) for k in cls.HEADER[5:]]
                log.append(
                    int(row["frame"]),
                    [float(row["x"]), float(row["y"]), float(row["z"])],
                    float(row["yaw"]),
                    np.array(vals).reshape(3, 3),
                )
        return log


# -- frame synthesis -------------------------------------------------------


@njit(nogil=True, cache=True)
def _depth_rows(
    rays, origin, plate_center, plate_radius, plate_height,
    poly, noise_a, noise_b, n_pix, n_block, w_pix, w_block, block,
    drop, drop_rate, doff, bf, zmin, zmax, out, r0, r1,
):  # fmt: skip
    h, w = out.shape
    npoly = poly.shape[0]
    use_noise = n_pix.shape[0] > 0
    use_drop = drop.shape[0] > 0
    for v in range(r0, r1):
        for u in range(w):
            out[v, u] = 0.0
            dz = rays[v, u, 2]
            if not dz < -1e-12:
                continue
            t = -origin[2] / dz
            tp = (plate_height - origin[2]) / dz
            if tp > 0 and origin[2] > plate_height:
                px = origin[0] + tp * rays[v, u, 0] - plate_center[0]
                py = origin[1] + tp * rays[v, u, 1] - plate_center[1]
                if px * px + py * py <= plate_radius * plate_radius:
                    t = tp
            # rays have unit optical-axis component, so t is the depth
            z = t
            g = 0.0
            for i in range(npoly - 1, -1, -1):
                g = g * z + poly[i]
            zm = z + g
            if use_noise:
                sigma = noise_a + noise_b * z * z
                zm += sigma * (w_pix * n_pix[v, u] + w_block * n_block[v // block, u // block])
            if use_drop and drop[v, u] < drop_rate:
                continue
            if not zm > 0:
                continue
            kd = np.ceil(doff - 8.0 * bf / zm - 0.5)
            d = (doff - kd) / 8.0
            if not d > 0:
                continue
            zq = bf / d
            if zq < zmin or zq > zmax:
                continue
            out[v, u] = zq


def pixel_rays(cam: CameraModel) -> np.ndarray:
    """World-frame ray directions of every IR pixel, scaled to unit depth."""
    k = cam.ir
    u = (np.arange(cam.width) - k.cx) / k.fx
    v = (np.arange(cam.height) - k.cy) / k.fy
    d = np.stack(np.broadcast_arrays(u[None, :], v[:, None], np.ones((1, 1))), axis=-1)
    return np.ascontiguousarray(d @ cam.camera_to_world.rotation.T)


class CameraSimulator:
    """Synthesises frames of one camera; deterministic in (profile.seed, frame)."""

    def __init__(self, scene: Scene, cam: CameraModel, profile: SensorProfile, threads: int | None = None):
        self.scene = scene
        self.cam = cam
        self.profile = profile
        self.threads = threads
        self._rays = pixel_rays(cam)
        self._poly = np.array(profile.offset_poly, dtype=float)
        self._world_to_rgb = cam.ir_to_rgb.compose(cam.camera_to_world.inverse())
        self._bg = hsv_to_rgb255(scene.background_color)
        self._fg = [hsv_to_rgb255(scene.front_color)] + [hsv_to_rgb255(scene.marker_color)] * 2

    def _noise(self, rng):
        p = self.profile
        h, w = self.cam.height, self.cam.width
        empty2 = np.zeros((0, 0), np.float32)
        if p.noise_a == 0 and p.noise_b == 0:
            return empty2, empty2, 0.0, 0.0
        rho = p.noise_correlation
        n_pix = rng.standard_normal((h, w), dtype=np.float32) if rho < 1 else np.zeros((h, w), np.float32)
        n_block = (
            rng.standard_normal((-(-h // p.noise_block), -(-w // p.noise_block)), dtype=np.float32)
            if rho > 0
            else np.zeros((1, 1), np.float32)
        )
        return n_pix, n_block, float(np.sqrt(1 - rho)), float(np.sqrt(rho))

    def depth(self, frame: int) -> DepthFrame:
        p = self.profile
        rng = np.random.default_rng([p.seed, frame])
        n_pix, n_block, w_pix, w_block = self._noise(rng)
        if p.dropout_rate > 0:
            drop = rng.random((self.cam.height, self.cam.width))
        else:
            drop = np.zeros((0, 0))
        pos, _ = self.scene.robot_pose(frame)
        out = np.empty((self.cam.height, self.cam.width))
        run_rows(
            _depth_rows,
            (
                self._rays, np.ascontiguousarray(self.cam.camera_to_world.translation),
                pos[:2].copy(), float(self.scene.plate_radius), float(pos[2]),
                self._poly, float(p.noise_a), float(p.noise_b), n_pix, n_block, w_pix, w_block,
                int(p.noise_block), drop, float(p.dropout_rate), float(p.doff), float(p.bf),
                MIN_DEPTH, MAX_DEPTH, out,
            ),
            self.cam.height,
            self.threads,
        )  # fmt: skip
        return DepthFrame(out, frame)

    def marker_discs(self, frame: int) -> list[tuple[float, float, float] | None]:
        """Projected (u, v, radius_px) of each marker in the colour image."""
        discs = []
        k = self.cam.rgb
        for m in self.scene.marker_positions(frame):
            p = self._world_to_rgb.apply(m)
            if p[2] <= 1e-6:
                discs.append(None)
                continue
            u, v = project(p, k)
            discs.append((u, v, k.fx * self.scene.marker_radius / p[2]))
        return discs

    def color(self, frame: int, occluded: bool = False) -> ColorFrame:
        h, w = self.cam.height, self.cam.width
        img = np.empty((h, w, 3), dtype=np.uint8)
        img[:] = self._bg
        if not occluded:
            for disc, col in zip(self.marker_discs(frame), self._fg):
                if disc is None:
                    continue
                u, v, r = disc
                u0, u1 = max(int(np.floor(u - r)), 0), min(int(np.ceil(u + r)) + 1, w)
                v0, v1 = max(int(np.floor(v - r)), 0), min(int(np.ceil(v + r)) + 1, h)
                if u0 >= u1 or v0 >= v1:
                    continue
                uu, vv = np.meshgrid(np.arange(u0, u1), np.arange(v0, v1))
                inside = (uu - u) ** 2 + (vv - v) ** 2 <= r * r
                img[v0:v1, u0:u1][inside] = col
        return ColorFrame(img, frame)

    def synthesize(self, frame: int, occluded: bool = False):
        if frame < 0:
            raise ValueError("frame index must be non-negative")
        pos, yaw = self.scene.robot_pose(frame)
        truth = (frame, pos, yaw, self.scene.marker_positions(frame))
        return self.depth(frame), self.color(frame, occluded), truth


def synthesize_frame(scene: Scene, cam: CameraModel, profile: SensorProfile, t: int):
    """One-shot convenience wrapper around :class:`CameraSimulator`."""
    return CameraSimulator(scene, cam, profile).synthesize(t)
