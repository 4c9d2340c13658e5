"""Scalar static-state Kalman filter run independently on every depth pixel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import DepthFrame
from .parallel import run_rows


@dataclass(frozen=True)
class DepthNoiseModel:
    """Measurement and process variances tied to the local Z-level gap.

    Both are ``scale * gap(z)**2 / 12``, the variance of uniform quantisation
    over one level; the gap is ``z**2 / (8 * bf)``. ``process_scale = 0``
    gives the pure static model with no process noise.
    """

    bf: float = 0.075 * 580.0
    measurement_scale: float = 1.0
    process_scale: float = 0.0
    floor: float = 1e-10

    def __post_init__(self):
        if self.bf <= 0 or self.measurement_scale <= 0 or self.floor <= 0:
            raise ValueError("noise model parameters must be positive")
        if self.process_scale < 0:
            raise ValueError("process_scale must be non-negative")

    def gap_variance(self, z):
        gap = np.asarray(z, dtype=float) ** 2 / (8.0 * self.bf)
        return gap * gap / 12.0

    def R(self, z):
        return self.measurement_scale * self.gap_variance(z) + self.floor

    def Q(self, z):
        return self.process_scale * self.gap_variance(z)


def pk_update(state, measurement: float, noise, P0: float = 1.0):
    """One predict/correct cycle; ``state`` is ``(Z, P)`` or ``None`` if fresh.

    ``noise`` is a :class:`DepthNoiseModel` or a constant measurement variance.
    Invalid measurements leave the state untouched.
    """
    if not (np.isfinite(measurement) and measurement > 0):
        return state
    if state is None:
        return float(measurement), float(P0)
    if isinstance(noise, DepthNoiseModel):
        R, Q = float(noise.R(measurement)), float(noise.Q(measurement))
    else:
        R, Q = float(noise), 0.0
    z_prev, p_prev = state
    p_bar = p_prev + Q
    k = p_bar / (p_bar + R)
    return z_prev + k * (measurement - z_prev), (1.0 - k) * p_bar


@dataclass
class PixelKalmanGrid:
    Z: np.ndarray
    P: np.ndarray
    initialized: np.ndarray
    invalid_run: np.ndarray

    @classmethod
    def fresh(cls, height: int, width: int) -> PixelKalmanGrid:
        return cls(
            np.zeros((height, width)),
            np.zeros((height, width)),
            np.zeros((height, width), dtype=np.bool_),
            np.zeros((height, width), dtype=np.int32),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.Z.shape

    def copy(self) -> PixelKalmanGrid:
        return PixelKalmanGrid(self.Z.copy(), self.P.copy(), self.initialized.copy(), self.invalid_run.copy())


@njit(nogil=True, cache=True)
def _kalman_rows(Z, P, init, run, depth, bf, r_scale, q_scale, floor, p0, reset, out, r0, r1):
    w = depth.shape[1]
    for v in range(r0, r1):
        for u in range(w):
            m = depth[v, u]
            if m > 0:
                run[v, u] = 0
                if init[v, u]:
                    gap = m * m / (8.0 * bf)
                    var = gap * gap / 12.0
                    p_bar = P[v, u] + q_scale * var
                    k = p_bar / (p_bar + (r_scale * var + floor))
                    Z[v, u] = Z[v, u] + k * (m - Z[v, u])
                    P[v, u] = (1.0 - k) * p_bar
                else:
                    Z[v, u] = m
                    P[v, u] = p0
                    init[v, u] = True
            else:
                run[v, u] += 1
                if run[v, u] > reset:
                    init[v, u] = False
            out[v, u] = Z[v, u] if init[v, u] else 0.0


def filter_frame(
    grid: PixelKalmanGrid,
    frame: DepthFrame,
    noise: DepthNoiseModel,
    P0: float = 1.0,
    reset_after: int = 5,
    threads: int | None = None,
) -> tuple[PixelKalmanGrid, DepthFrame]:
    """Update ``grid`` in place with ``frame`` and return it with the filtered depth.

    A pixel left without a valid measurement for more than ``reset_after``
    consecutive frames forgets its estimate.
    """
    depth = np.ascontiguousarray(frame.data, dtype=np.float64)
    if depth.shape != grid.shape:
        raise ValueError(f"frame shape {depth.shape} does not match grid shape {grid.shape}")
    out = np.empty_like(depth)
    run_rows(
        _kalman_rows,
        (
            grid.Z, grid.P, grid.initialized, grid.invalid_run, depth,
            float(noise.bf), float(noise.measurement_scale), float(noise.process_scale),
            float(noise.floor), float(P0), int(reset_after), out,
        ),
        depth.shape[0],
        threads,
    )  # fmt: skip
    return grid, DepthFrame(out, frame.timestamp)
