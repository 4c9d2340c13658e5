"""HSV segmentation of the three robot markers and pose from their 3D centres."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

from .geometry import ColorFrame, PointCloud
from .parallel import run_rows


@dataclass(frozen=True)
class HsvFrame:
    h: np.ndarray  # degrees in [0, 360)
    s: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class HsvRange:
    """Box in HSV space; the hue interval wraps through 0 when ``hue[0] > hue[1]``.

    Saturation or value intervals with ``lo > hi`` are empty.
    """

    hue: tuple[float, float] = (0.0, 360.0)
    sat: tuple[float, float] = (0.0, 1.0)
    val: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not all(0.0 <= x <= 360.0 for x in self.hue):
            raise ValueError(f"hue bounds {self.hue} outside [0, 360]")
        for name in ("sat", "val"):
            if not all(0.0 <= x <= 1.0 for x in getattr(self, name)):
                raise ValueError(f"{name} bounds outside [0, 1]")

    def to_dict(self) -> dict:
        return {"hue": list(self.hue), "sat": list(self.sat), "val": list(self.val)}

    @classmethod
    def from_dict(cls, d: dict) -> HsvRange:
        return cls(tuple(d["hue"]), tuple(d["sat"]), tuple(d["val"]))


@njit(nogil=True, cache=True)
def _hsv_rows(rgb, h_out, s_out, v_out, r0, r1):
    w = rgb.shape[1]
    for y in range(r0, r1):
        for x in range(w):
            r = rgb[y, x, 0] / 255.0
            g = rgb[y, x, 1] / 255.0
            b = rgb[y, x, 2] / 255.0
            mx = max(r, g, b)
            mn = min(r, g, b)
            delta = mx - mn
            v_out[y, x] = mx
            s_out[y, x] = delta / mx if mx > 0 else 0.0
            if delta == 0:
                hue = 0.0
            elif mx == r:
                hue = 60.0 * (((g - b) / delta) % 6.0)
            elif mx == g:
                hue = 60.0 * ((b - r) / delta + 2.0)
            else:
                hue = 60.0 * ((r - g) / delta + 4.0)
            if hue >= 360.0:
                hue -= 360.0
            h_out[y, x] = hue


def rgb_to_hsv(frame, threads: int | None = None) -> HsvFrame:
    rgb = np.ascontiguousarray(frame.data if isinstance(frame, ColorFrame) else frame, dtype=np.uint8)
    shape = rgb.shape[:2]
    h, s, v = np.empty(shape), np.empty(shape), np.empty(shape)
    run_rows(_hsv_rows, (rgb, h, s, v), shape[0], threads)
    return HsvFrame(h, s, v)


def threshold_mask(frame: HsvFrame, rng: HsvRange) -> np.ndarray:
    h0, h1 = rng.hue
    hue = (frame.h >= h0) & (frame.h <= h1) if h0 <= h1 else (frame.h >= h0) | (frame.h <= h1)
    return (
        hue
        & (frame.s >= rng.sat[0])
        & (frame.s <= rng.sat[1])
        & (frame.v >= rng.val[0])
        & (frame.v <= rng.val[1])
    )


def _bbox(mask: np.ndarray, pad: int):
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    h, w = mask.shape
    return (
        slice(max(rows[0] - pad, 0), min(rows[-1] + pad + 1, h)),
        slice(max(cols[0] - pad, 0), min(cols[-1] + pad + 1, w)),
    )


def morph_open(mask: np.ndarray, kernel_radius: int = 1) -> np.ndarray:
    """Erosion then dilation by a (2r+1)-square; pixels beyond the border count as false."""
    if kernel_radius < 1:
        raise ValueError("kernel_radius must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(mask)
    box = _bbox(mask, kernel_radius)
    if box is None:
        return out
    se = np.ones((2 * kernel_radius + 1,) * 2, dtype=bool)
    crop = mask[box]
    eroded = ndimage.binary_erosion(crop, se, border_value=0)
    out[box] = ndimage.binary_dilation(eroded, se, border_value=0)
    return out


@dataclass(frozen=True)
class Blob:
    centroid: tuple[float, float]  # (x, y) = (column, row)
    area: int
    rows: np.ndarray
    cols: np.ndarray


_EIGHT = np.ones((3, 3), dtype=bool)


def extract_centroids(mask: np.ndarray, min_area: int = 1) -> list[Blob]:
    """8-connected components with area >= ``min_area``, largest first.

    Centroids are first image moments over the zeroth moment of the filled region.
    """
    mask = np.asarray(mask, dtype=bool)
    box = _bbox(mask, 0)
    if box is None:
        return []
    labels, n = ndimage.label(mask[box], structure=_EIGHT)
    rr, cc = np.nonzero(labels)
    lab = labels[rr, cc]
    rr = rr + box[0].start
    cc = cc + box[1].start
    m00 = np.bincount(lab, minlength=n + 1)
    m10 = np.bincount(lab, weights=cc.astype(float), minlength=n + 1)
    m01 = np.bincount(lab, weights=rr.astype(float), minlength=n + 1)
    order = np.argsort(lab, kind="stable")
    starts = np.concatenate([[0], np.cumsum(m00[1:])])
    blobs = []
    for i in range(1, n + 1):
        if m00[i] < min_area:
            continue
        idx = order[starts[i - 1] : starts[i]]
        blobs.append(Blob((m10[i] / m00[i], m01[i] / m00[i]), int(m00[i]), rr[idx], cc[idx]))
    blobs.sort(key=lambda b: -b.area)
    return blobs


# -- 3D markers and pose ---------------------------------------------------


@dataclass(frozen=True)
class MarkerObservation:
    """Front, left and right marker centres; ``None`` where a marker was not seen."""

    pixels: tuple  # three (x, y) or None
    positions: tuple  # three 3-vectors or None

    @property
    def visible(self) -> tuple[bool, bool, bool]:
        return tuple(p is not None for p in self.positions)

    @property
    def complete(self) -> bool:
        return all(self.visible)

    def array(self) -> np.ndarray:
        """(3, 3) positions with NaN rows for missing markers."""
        return np.array([p if p is not None else [np.nan] * 3 for p in self.positions], dtype=float)


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    yaw: float


def blob_position(cloud: PointCloud, blob: Blob) -> np.ndarray:
    pts = cloud.points[blob.rows, blob.cols]
    ok = cloud.valid[blob.rows, blob.cols]
    return pts[ok].mean(axis=0)


def observe_markers(
    cloud: PointCloud,
    rear_range: HsvRange,
    front_range: HsvRange,
    up,
    kernel_radius: int = 1,
    min_area: int | None = None,
) -> MarkerObservation:
    """Locate the markers in a registered cloud (camera-frame positions).

    ``up`` is the world vertical expressed in the camera frame; it tells the
    two rear markers apart.
    """
    if min_area is None:
        min_area = (2 * kernel_radius + 1) ** 2
    hsv = rgb_to_hsv(cloud.color_image())
    front = extract_centroids(morph_open(threshold_mask(hsv, front_range), kernel_radius), min_area)
    rear = extract_centroids(morph_open(threshold_mask(hsv, rear_range), kernel_radius), min_area)
    f = front[0] if front else None
    f_pos = blob_position(cloud, f) if f else None
    if f is None or len(rear) < 2:
        # without the full triangle the rear markers cannot be told apart
        return MarkerObservation((f.centroid if f else None, None, None), (f_pos, None, None))
    a, b = rear[0], rear[1]
    pa, pb = blob_position(cloud, a), blob_position(cloud, b)
    center = (f_pos + pa + pb) / 3.0
    side = np.dot(np.cross(f_pos - center, pa - center), np.asarray(up, dtype=float))
    if side > 0:
        return MarkerObservation((f.centroid, a.centroid, b.centroid), (f_pos, pa, pb))
    return MarkerObservation((f.centroid, b.centroid, a.centroid), (f_pos, pb, pa))


def compute_pose(positions, eps_area: float = 1e-6) -> Pose | None:
    """Pose from (front, left, right) positions in a z-up frame.

    Returns ``None`` (no measurement) unless all three markers are present and
    form a proper triangle. Yaw is measured from +x towards +y.
    """
    if isinstance(positions, MarkerObservation):
        positions = positions.positions
    if positions is None or any(p is None for p in positions):
        return None
    pts = np.asarray(positions, dtype=float)
    if pts.shape != (3, 3) or not np.all(np.isfinite(pts)):
        return None
    area = 0.5 * np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0]))
    if area <= eps_area:
        return None
    center = pts.mean(axis=0)
    heading = pts[0] - center
    return Pose(center, float(np.arctan2(heading[1], heading[0])))
