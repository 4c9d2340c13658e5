"""Covariance-intersection fusion of per-camera estimates in the world frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, Extrinsics

MODES = ("naive", "fast", "pk", "adaptive")


class SingularCovarianceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SensorEstimate:
    camera_id: int
    position: np.ndarray  # world frame, metres
    P: np.ndarray  # 3x3 estimate covariance
    K_sensor: np.ndarray  # 3x3 residual sensor covariance after correction
    Z_dist: float  # target to camera distance
    is_prediction_only: bool = False


@dataclass(frozen=True, eq=False)
class FusedEstimate:
    x: np.ndarray
    P: np.ndarray
    weights: np.ndarray
    camera_ids: tuple


def _check_pd(P: np.ndarray, who) -> None:
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"covariance of camera {who} is not positive definite") from exc


def to_world(
    position, P, cam: CameraModel | Extrinsics, camera_id: int = 0, K_sensor=None,
    is_prediction_only: bool = False,
) -> SensorEstimate:
    """Map a camera-frame position and covariance to the world frame."""
    e = cam.camera_to_world if isinstance(cam, CameraModel) else cam
    p = np.asarray(position, dtype=float)
    P = np.asarray(P, dtype=float)
    R = e.rotation
    K = np.zeros((3, 3)) if K_sensor is None else np.asarray(K_sensor, dtype=float)
    return SensorEstimate(
        camera_id, e.apply(p), R @ P @ R.T, K, float(np.linalg.norm(p)), is_prediction_only
    )


def quality_scores(estimates, mode: str = "adaptive", kappa: float = 1.0, raw_distance: bool = False) -> np.ndarray:
    """Scores ``s_n``; smaller means a more trusted camera.

    ``pk`` uses ``tr K + tr P``; ``adaptive`` adds the distance term, either
    ``kappa * Z**2`` (default, commensurate with the traces) or raw ``Z``.
    """
    s = np.array([np.trace(e.K_sensor) + np.trace(e.P) for e in estimates], dtype=float)
    if mode == "adaptive":
        z = np.array([e.Z_dist for e in estimates], dtype=float)
        s = s + (z if raw_distance else kappa * z * z)
    elif mode != "pk":
        raise ValueError(f"quality scores are defined for 'pk' and 'adaptive', not {mode!r}")
    return s


def ci_weights(estimates, mode: str = "fast", kappa: float = 1.0, raw_distance: bool = False) -> np.ndarray:
    if len(estimates) == 0:
        raise ValueError("at least one estimate is required")
    if mode not in MODES:
        raise ValueError(f"unknown weighting mode {mode!r}; expected one of {MODES}")
    for e in estimates:
        _check_pd(e.P, e.camera_id)
    n = len(estimates)
    if mode == "naive":
        return np.ones(n)
    if n == 1:
        return np.ones(1)
    if mode == "fast":
        info = np.array([np.trace(np.linalg.inv(e.P)) for e in estimates])
        return info / info.sum()
    s = quality_scores(estimates, mode, kappa, raw_distance)
    total = s.sum()
    if not total > 0:
        # every score is zero: nothing distinguishes the cameras
        return np.full(n, 1.0 / n)
    # the (n - 1) keeps the weights summing to one
    return (total - s) / ((n - 1) * total)


def ci_fuse(estimates, weights) -> FusedEstimate:
    """``P^-1 = sum w_n P_n^-1`` and ``x = P sum w_n P_n^-1 x_n``."""
    w = np.asarray(weights, dtype=float)
    if len(estimates) == 0 or len(w) != len(estimates):
        raise ValueError("need one weight per estimate")
    info = np.zeros((3, 3))
    vec = np.zeros(3)
    for e, wi in zip(estimates, w):
        _check_pd(e.P, e.camera_id)
        Ii = np.linalg.inv(e.P)
        info += wi * Ii
        vec += wi * Ii @ e.position
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("weighted information sum is singular") from exc
    P = np.linalg.inv(info)
    P = 0.5 * (P + P.T)
    return FusedEstimate(P @ vec, P, w, tuple(e.camera_id for e in estimates))


@dataclass(frozen=True, eq=False)
class CameraOutput:
    """One camera's world-frame marker estimates (front, left, right) and yaw for a frame."""

    camera_id: int
    markers: tuple  # three SensorEstimate
    yaw: float | None = None


@dataclass(frozen=True, eq=False)
class FrameFusion:
    position: np.ndarray
    yaw: float | None
    P: np.ndarray
    markers: tuple  # three FusedEstimate
    camera_ids: tuple
    weights: np.ndarray  # per camera, averaged over the markers


def circular_mean(angles, weights) -> float:
    a = np.asarray(angles, dtype=float)
    w = np.asarray(weights, dtype=float)
    return float(np.arctan2(np.sum(w * np.sin(a)), np.sum(w * np.cos(a))))


def fuse_frame(outputs, mode: str = "fast", kappa: float = 1.0, raw_distance: bool = False) -> FrameFusion | None:
    """Fuse each marker across cameras, then rebuild the robot pose.

    Returns ``None`` when no camera contributed. Prediction-only estimates take
    part with their grown covariance.
    """
    outputs = list(outputs)
    if not outputs:
        return None
    fused = []
    w_sum = np.zeros(len(outputs))
    for j in range(3):
        est = [o.markers[j] for o in outputs]
        w = ci_weights(est, mode, kappa, raw_distance)
        fused.append(ci_fuse(est, w))
        w_sum += w
    w_cam = w_sum / 3.0
    position = np.mean([f.x for f in fused], axis=0)
    P = np.mean([f.P for f in fused], axis=0)
    yaws = [(o.yaw, wc) for o, wc in zip(outputs, w_cam) if o.yaw is not None]
    yaw = circular_mean(*zip(*yaws)) if yaws else None
    return FrameFusion(position, yaw, P, tuple(fused), tuple(o.camera_id for o in outputs), w_cam)
