"""Per-sensor polynomial depth correction and unreliable-depth filtering."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numpy.polynomial import polynomial as npoly

from .geometry import INVALID, DepthFrame
from .parallel import run_rows
from .simulator import MAX_DEPTH, MIN_DEPTH, SensorProfile, level_depth

VALID_RANGE = (MIN_DEPTH, MAX_DEPTH)


class FitError(ValueError):
    pass


def filter_unreliable(frame: DepthFrame, valid_range=VALID_RANGE) -> DepthFrame:
    lo, hi = valid_range
    d = frame.data
    return DepthFrame(np.where((d >= lo) & (d <= hi), d, INVALID), frame.timestamp)


@dataclass(frozen=True, eq=False)
class CorrectionModel:
    """Offset polynomial ``f(z_sh) = z_sh - z_cor`` and its Z-level lookup table.

    The polynomial is stored in the scaled variable ``(z - center) / half_width``
    mapping the sample support onto [-1, 1]; outside the support the offset of
    the nearest supported depth is used.
    """

    coefficients: np.ndarray
    support: tuple[float, float]
    doff: float
    bf: float
    valid_range: tuple[float, float] = VALID_RANGE
    residual_rms: float = 0.0
    kd_min: int = field(init=False)
    lut: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=float))
        lo, hi = self.valid_range
        # raw disparity grows with depth, so the table spans [kd(lo), kd(hi)]
        kd_lo = int(np.floor(self.doff - 8.0 * self.bf / lo)) - 1
        kd_hi = int(np.ceil(self.doff - 8.0 * self.bf / hi)) + 1
        kd = np.arange(kd_lo, kd_hi + 1)
        z = level_depth(kd, self.doff, self.bf)
        corrected = self.correct(z)
        inside = (z >= lo) & (z <= hi) & (corrected >= lo) & (corrected <= hi)
        object.__setattr__(self, "kd_min", kd_lo)
        object.__setattr__(self, "lut", np.where(inside, corrected, INVALID))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def offset(self, z):
        lo, hi = self.support
        zc = np.clip(np.asarray(z, dtype=float), lo, hi)
        x = (zc - 0.5 * (lo + hi)) / (0.5 * (hi - lo))
        return npoly.polyval(x, self.coefficients)

    def correct(self, z):
        z = np.asarray(z, dtype=float)
        return z - self.offset(z)

    @classmethod
    def identity(cls, profile: SensorProfile, valid_range=VALID_RANGE) -> CorrectionModel:
        return cls(np.zeros(1), valid_range, profile.doff, profile.bf, valid_range)

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "support": list(self.support),
            "doff": self.doff,
            "bf": self.bf,
            "valid_range": list(self.valid_range),
            "residual_rms": self.residual_rms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CorrectionModel:
        return cls(
            np.array(d["coefficients"], dtype=float),
            tuple(d["support"]),
            float(d["doff"]),
            float(d["bf"]),
            tuple(d.get("valid_range", VALID_RANGE)),
            float(d.get("residual_rms", 0.0)),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> CorrectionModel:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_correction(
    samples, doff: float, bf: float, degree: int = 8, valid_range=VALID_RANGE
) -> CorrectionModel:
    """Least-squares fit of the offset polynomial to ``(z_sh, z_cor)`` pairs."""
    s = np.asarray(samples, dtype=float).reshape(-1, 2)
    if len(s) < degree + 1:
        raise FitError(f"need at least {degree + 1} samples for degree {degree}, got {len(s)}")
    if not np.all(np.isfinite(s)):
        raise FitError("samples contain non-finite depths")
    z_sh, z_cor = s[:, 0], s[:, 1]
    lo, hi = float(z_sh.min()), float(z_sh.max())
    if hi - lo <= 0:
        raise FitError("samples do not span any depth interval")
    x = (z_sh - 0.5 * (lo + hi)) / (0.5 * (hi - lo))
    vander = npoly.polyvander(x, degree)
    coef, _, rank, _ = np.linalg.lstsq(vander, z_sh - z_cor, rcond=None)
    if rank < degree + 1:
        raise FitError(f"design matrix is rank deficient ({rank} < {degree + 1})")
    model = CorrectionModel(coef, (lo, hi), doff, bf, tuple(valid_range))
    resid = model.correct(z_sh) - z_cor
    return CorrectionModel(coef, (lo, hi), doff, bf, tuple(valid_range), float(np.sqrt(np.mean(resid**2))))


@njit(nogil=True, cache=True)
def _lut_rows(depth, lut, kd_min, doff, bf, out, r0, r1):
    n = lut.shape[0]
    w = depth.shape[1]
    for v in range(r0, r1):
        for u in range(w):
            z = depth[v, u]
            out[v, u] = 0.0
            if not z > 0:
                continue
            idx = int(np.ceil(doff - 8.0 * bf / z - 0.5)) - kd_min
            if 0 <= idx < n:
                out[v, u] = lut[idx]


def apply_correction(frame: DepthFrame, model: CorrectionModel, threads: int | None = None) -> DepthFrame:
    """Replace every valid depth by the corrected value of its Z-level."""
    d = np.ascontiguousarray(frame.data, dtype=np.float64)
    out = np.empty_like(d)
    run_rows(_lut_rows, (d, model.lut, model.kd_min, model.doff, model.bf, out), d.shape[0], threads)
    return DepthFrame(out, frame.timestamp)


def apply_correction_direct(frame: DepthFrame, model: CorrectionModel) -> DepthFrame:
    """Per-pixel polynomial evaluation; reference path for the lookup table.

    Readings outside the valid range are dropped, as the table has no entry for them.
    """
    d = frame.data
    lo, hi = model.valid_range
    valid = (d >= lo) & (d <= hi)
    out = np.zeros_like(d, dtype=float)
    out[valid] = model.correct(d[valid])
    out[(out < lo) | (out > hi)] = INVALID
    return DepthFrame(out, frame.timestamp)


def sample_readings(profile: SensorProfile, true_depths, rng) -> np.ndarray:
    """Simulated ``(z_sh, z_cor)`` pairs for targets at ``true_depths``.

    Readings falling outside the useful range are dropped, as on the device.
    """
    from .simulator import quantize_depth

    z = np.asarray(true_depths, dtype=float)
    zm = z + profile.offset(z) + profile.noise_sigma(z) * rng.standard_normal(z.shape)
    keep = zm > 0
    z, zm = z[keep], zm[keep]
    zq = quantize_depth(zm, profile)
    keep = (zq >= MIN_DEPTH) & (zq <= MAX_DEPTH)
    return np.column_stack([zq[keep], z[keep]])


def calibration_samples(profile: SensorProfile, n: int = 2000, seed: int | None = None) -> np.ndarray:
    rng = np.random.default_rng([profile.seed if seed is None else seed, 7919])
    return sample_readings(profile, rng.uniform(MIN_DEPTH, MAX_DEPTH, n), rng)


def load_samples_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                if rows:
                    raise
                continue  # header line
    return np.array(rows, dtype=float).reshape(-1, 2)


def save_samples_csv(path, samples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z_sh", "z_cor"])
        for a, b in np.asarray(samples):
            w.writerow([repr(float(a)), repr(float(b))])
