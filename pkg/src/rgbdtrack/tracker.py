"""Per-marker state estimation: a Kalman baseline and the robust mixed Kalman/H-infinity filter.

The state is ``[position, velocity]`` in metres and metres per second. Measurements
are 3D marker positions; a missing measurement is passed as ``None`` or a vector
containing NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Extrinsics
from .markers import Pose, compute_pose


class NumericalError(ArithmeticError):
    pass


class FeasibilityError(ArithmeticError):
    pass


class InfeasibleTheta(FeasibilityError):
    """The error covariance reached the worst-case bound: ``P < I / theta**2`` fails."""


class InfeasibleAlpha(FeasibilityError):
    """``alpha * I - N P~ N^T`` is not positive definite."""


def _is_pd(a: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _inv(a: np.ndarray, what: str) -> np.ndarray:
    try:
        out = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} is singular") from exc
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"{what} is singular")
    return out


def _missing(z) -> bool:
    return z is None or not np.all(np.isfinite(np.asarray(z, dtype=float)))


@dataclass(frozen=True, eq=False)
class MotionModel:
    F: np.ndarray
    B: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    dt: float


def make_motion_model(dt: float, q_accel: float, r_pos: float, floor: float = 1e-9) -> MotionModel:
    """Constant-velocity model driven by a bounded acceleration input.

    ``q_accel`` is the acceleration standard deviation (m/s^2) and ``r_pos``
    the position measurement standard deviation (m). ``dt = 0`` is accepted and
    gives the identity transition.
    """
    if not dt >= 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    if q_accel < 0 or r_pos <= 0 or floor <= 0:
        raise ValueError("q_accel must be >= 0, r_pos and floor > 0")
    i3 = np.eye(3)
    F = np.block([[i3, dt * i3], [np.zeros((3, 3)), i3]])
    B = np.vstack([0.5 * dt * dt * i3, dt * i3])
    H = np.hstack([i3, np.zeros((3, 3))])
    Q = q_accel**2 * B @ B.T + floor * np.eye(6)
    R = r_pos**2 * i3
    return MotionModel(F, B, H, Q, R, float(dt))


# -- Kalman baseline -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KalmanState:
    x: np.ndarray
    P: np.ndarray


def kf_predict(state: KalmanState, model: MotionModel) -> KalmanState:
    if not _is_pd(state.P):
        raise NumericalError("state covariance is not positive definite")
    F = model.F
    return KalmanState(F @ state.x, _sym(F @ state.P @ F.T + model.Q))


def kf_update(state: KalmanState, model: MotionModel, z) -> KalmanState:
    if _missing(z):
        return state
    H = model.H
    S = H @ state.P @ H.T + model.R
    K = state.P @ H.T @ _inv(S, "innovation covariance")
    x = state.x + K @ (np.asarray(z, dtype=float) - H @ state.x)
    ikh = np.eye(len(x)) - K @ H
    # Joseph form keeps P positive definite
    P = ikh @ state.P @ ikh.T + K @ model.R @ K.T
    return KalmanState(x, _sym(P))


def kf_step(state: KalmanState, model: MotionModel, z=None) -> KalmanState:
    return kf_update(kf_predict(state, model), model, z)


# -- robust filter ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RobustParams:
    """Parameters of the robust filter.

    ``M1`` (n x p), ``M2`` (m x p) and ``N`` (q x n) shape the model uncertainty
    ``[dF; dH] = [M1; M2] Gamma N`` with ``Gamma^T Gamma <= I``. ``S1`` and ``S2``
    initialise ``P`` and ``P~``. ``form`` selects the consistent recursion
    (default) or the ``legacy`` one kept for comparison.
    """

    theta: float
    alpha: float
    M1: np.ndarray
    M2: np.ndarray
    N: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    epsilon: float = 1e-8
    form: str = "consistent"

    def __post_init__(self):
        for name in ("M1", "M2", "N", "S1", "S2"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.theta >= 0:
            raise ValueError(f"theta must be non-negative, got {self.theta}")
        if self.form not in ("consistent", "legacy"):
            raise ValueError(f"unknown form {self.form!r}")
        n = self.S1.shape[0]
        for name in ("S1", "S2"):
            s = getattr(self, name)
            if s.shape != (n, n) or not np.allclose(s, s.T) or not _is_pd(s):
                raise ValueError(f"{name} must be symmetric positive definite {n}x{n}")
        if self.M1.shape[0] != n or self.N.shape[1] != n:
            raise ValueError("M1 rows and N columns must match the state dimension")
        if self.M1.shape[1] != self.M2.shape[1]:
            raise ValueError("M1 and M2 must have the same number of columns")


def default_robust_params(
    model: MotionModel,
    theta: float = 1e-3,
    alpha: float = 1.0,
    m1: float = 1.0,
    m2: float = 0.0,
    n_scale: float = 1e-3,
    s1: float = 1.0,
    s2: float = 1.0,
    epsilon: float = 1e-8,
    form: str = "consistent",
) -> RobustParams:
    """Uncertainty acting on the acceleration input, the measurement and the position rows of F.

    ``M1 = [m1 B, 0]`` and ``M2 = [0, m2 I]`` use separate columns of Gamma so
    the two perturbations are not forced to be correlated; ``N = n_scale [I 0]``.
    """
    n = model.F.shape[0]
    m = model.H.shape[0]
    p = model.B.shape[1] + m
    M1 = np.zeros((n, p))
    M1[:, : model.B.shape[1]] = m1 * model.B
    M2 = np.zeros((m, p))
    M2[:, model.B.shape[1] :] = m2 * np.eye(m)
    N = n_scale * np.hstack([np.eye(3), np.zeros((3, n - 3))])
    return RobustParams(theta, alpha, M1, M2, N, s1 * np.eye(n), s2 * np.eye(n), epsilon, form)


@dataclass(frozen=True, eq=False)
class RobustState:
    """``x_hat`` is the one-step predicted state; ``P`` bounds its error covariance."""

    x_hat: np.ndarray
    P: np.ndarray
    P_tilde: np.ndarray
    k: int = 0

    @classmethod
    def initial(cls, x0, params: RobustParams) -> RobustState:
        return cls(np.asarray(x0, dtype=float), params.S1.copy(), params.S2.copy(), 0)


@dataclass(frozen=True, eq=False)
class RobustEstimate:
    """Filtered state at the current step and its covariance."""

    x: np.ndarray
    P: np.ndarray
    predicted_only: bool


@dataclass(frozen=True, eq=False)
class UncertaintyRealization:
    """A particular ``Gamma`` with ``Gamma^T Gamma <= I``, used to perturb true dynamics."""

    Gamma: np.ndarray

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        if np.linalg.norm(g, 2) > 1 + 1e-12:
            raise ValueError("Gamma must have spectral norm <= 1")
        object.__setattr__(self, "Gamma", g)

    def perturbed(self, model: MotionModel, params: RobustParams) -> tuple[np.ndarray, np.ndarray]:
        dF = params.M1 @ self.Gamma @ params.N
        dH = params.M2 @ self.Gamma @ params.N
        return model.F + dF, model.H + dH


def check_feasibility(P: np.ndarray, P_tilde: np.ndarray, params: RobustParams, alpha: float | None = None):
    alpha = params.alpha if alpha is None else alpha
    q = params.N.shape[0]
    if params.theta > 0 and not _is_pd(np.eye(len(P)) / params.theta**2 - P):
        raise InfeasibleTheta(
            f"largest eigenvalue of P ({np.linalg.eigvalsh(P).max():.3g}) reaches 1/theta^2 "
            f"({1 / params.theta**2:.3g}); decrease theta"
        )
    if not _is_pd(alpha * np.eye(q) - params.N @ P_tilde @ params.N.T):
        raise InfeasibleAlpha(f"alpha = {alpha:.3g} is too small for the current P~; increase alpha")


def _step_consistent(state, model, params, alpha, z):
    F, H, Q, R = model.F, model.H, model.Q, model.R
    M1, M2, N, eps = params.M1, params.M2, params.N, params.epsilon
    n = len(state.x_hat)
    Pt = state.P_tilde
    R11 = Q + alpha * M1 @ M1.T
    R12 = alpha * M1 @ M2.T
    R22 = R + alpha * M2 @ M2.T
    A_inv = _inv(alpha * np.eye(N.shape[0]) - N @ Pt @ N.T, "alpha I - N P~ N^T")
    G = Pt @ N.T @ A_inv @ N
    F1 = F + F @ G
    H1 = H + H @ G
    T = _inv(_inv(state.P, "P") - params.theta**2 * np.eye(n), "P^-1 - theta^2 I")
    Pt_next = F @ Pt @ F.T + F @ Pt @ N.T @ A_inv @ N @ Pt @ F.T + R11 + eps * np.eye(n)
    x = state.x_hat
    if _missing(z):
        P_next = F1 @ T @ F1.T + R11 + eps * np.eye(n)
        return F1 @ x, P_next, Pt_next, RobustEstimate(x.copy(), _sym(T), True)
    z = np.asarray(z, dtype=float)
    Rt = H1 @ T @ H1.T + R22
    Rt_inv = _inv(Rt, "R~")
    L = F1 @ T @ H1.T + R12
    K = L @ Rt_inv
    P_next = F1 @ T @ F1.T + R11 - L @ Rt_inv @ L.T + eps * np.eye(n)
    x_next = (F1 - K @ H1) @ x + K @ z
    TH = T @ H1.T @ Rt_inv
    est = RobustEstimate(x + TH @ (z - H1 @ x), _sym(T - TH @ H1 @ T), False)
    return x_next, P_next, Pt_next, est


def _step_legacy(state, model, params, alpha, z):
    # R1/R2-based recursion; kept for comparison, it does not reduce to
    # the Kalman filter when the uncertainty vanishes.
    F, H, Q, R = model.F, model.H, model.Q, model.R
    M1, M2, N, eps = params.M1, params.M2, params.N, params.epsilon
    n = len(state.x_hat)
    Pt = state.P_tilde
    R11 = Q + alpha * M1 @ M1.T
    R12 = alpha * M1 @ M2.T
    R22 = R + alpha * M2 @ M2.T
    A_inv = _inv(alpha * np.eye(N.shape[0]) - N @ Pt @ N.T, "alpha I - N P~ N^T")
    W = _inv(_inv(Pt, "P~") - N.T @ N / alpha, "P~^-1 - N^T N / alpha")
    R1 = W @ F.T
    R1_inv = _inv(R1, "R1")
    R2 = R1_inv @ W @ R1_inv.T
    F1 = F + R11 @ R1_inv
    H1 = H + R12.T @ R1_inv
    T = _inv(_inv(state.P, "P") - params.theta**2 * np.eye(n), "P^-1 - theta^2 I")
    Pt_next = F @ Pt @ F.T + F @ Pt @ N.T @ A_inv @ N @ Pt @ F.T + R11 + eps * np.eye(n)
    x = state.x_hat
    base = F1 @ T @ F1.T + R11 + R11 @ R2 @ R11.T + eps * np.eye(n)
    if _missing(z):
        return F1 @ x, base, Pt_next, RobustEstimate(x.copy(), _sym(T), True)
    z = np.asarray(z, dtype=float)
    L = F1 @ T @ H1.T + R11 @ R2 @ R12
    P_next = base - L @ _inv(R, "R") @ L.T
    Rt_inv = _inv(H1 @ T @ H1.T + R12.T @ R2 @ R12 + R22, "R~")
    K = L @ Rt_inv
    x_next = (F1 - K @ H1) @ x + K @ z
    TH = T @ H1.T @ Rt_inv
    est = RobustEstimate(x + TH @ (z - H1 @ x), _sym(T - TH @ H1 @ T), False)
    return x_next, P_next, Pt_next, est


def rf_step(
    state: RobustState, model: MotionModel, params: RobustParams, z=None, alpha: float | None = None
) -> tuple[RobustState, RobustEstimate]:
    """Advance the robust filter by one measurement (or none).

    Returns the next predicted state and the filtered estimate for the
    current step. Feasibility is checked on entry and on the new covariances.
    """
    alpha = params.alpha if alpha is None else alpha
    check_feasibility(state.P, state.P_tilde, params, alpha)
    step = _step_consistent if params.form == "consistent" else _step_legacy
    x_next, P_next, Pt_next, est = step(state, model, params, alpha, z)
    P_next, Pt_next = _sym(P_next), _sym(Pt_next)
    if not (np.all(np.isfinite(P_next)) and np.all(np.isfinite(x_next))):
        raise NumericalError("robust recursion produced non-finite values")
    if not _is_pd(P_next):
        raise NumericalError("robust recursion produced a covariance that is not positive definite")
    check_feasibility(P_next, Pt_next, params, alpha)
    return RobustState(x_next, P_next, Pt_next, state.k + 1), est


# -- sequential trackers ---------------------------------------------------


@dataclass
class MarkerTracker:
    """Filters one marker's position stream with the Kalman or the robust filter.

    The state is initialised from the first measurement (zero velocity). On
    ``InfeasibleAlpha`` the robust step is retried with doubled alpha up to
    ``alpha_retries`` times; the enlarged alpha is kept afterwards.
    """

    model: MotionModel
    params: RobustParams | None = None
    kind: str = "rf"
    alpha_retries: int = 3
    kf_state: KalmanState | None = field(default=None, init=False)
    rf_state: RobustState | None = field(default=None, init=False)
    alpha: float = field(default=0.0, init=False)

    def __post_init__(self):
        if self.kind not in ("kf", "rf"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind == "rf" and self.params is None:
            raise ValueError("the robust filter needs RobustParams")
        if self.params is not None:
            self.alpha = self.params.alpha

    @property
    def started(self) -> bool:
        return self.kf_state is not None or self.rf_state is not None

    def _initial(self, z) -> np.ndarray:
        n = self.model.F.shape[0]
        x0 = np.zeros(n)
        x0[:3] = z
        return x0

    def step(self, z=None) -> RobustEstimate | None:
        if not self.started:
            if _missing(z):
                return None
            x0 = self._initial(np.asarray(z, dtype=float))
            if self.kind == "kf":
                S1 = self.params.S1 if self.params is not None else np.eye(len(x0))
                self.kf_state = kf_update(KalmanState(x0, S1.copy()), self.model, z)
                return RobustEstimate(self.kf_state.x, self.kf_state.P, False)
            self.rf_state = RobustState.initial(x0, self.params)
        if self.kind == "kf":
            self.kf_state = kf_step(self.kf_state, self.model, z)
            return RobustEstimate(self.kf_state.x, self.kf_state.P, _missing(z))
        for attempt in range(self.alpha_retries + 1):
            try:
                self.rf_state, est = rf_step(self.rf_state, self.model, self.params, z, self.alpha)
                return est
            except InfeasibleAlpha:
                if attempt == self.alpha_retries:
                    raise
                self.alpha *= 2.0
        raise AssertionError("unreachable")


@dataclass(frozen=True, eq=False)
class TrackResult:
    states: np.ndarray  # (n, 6) filtered states, NaN before the first measurement
    covariances: np.ndarray  # (n, 6, 6)
    predicted_only: np.ndarray  # (n,) bool

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :3]

    @property
    def position_covariances(self) -> np.ndarray:
        return self.covariances[:, :3, :3]


def track_marker(measurements, model: MotionModel, params: RobustParams | None = None, kind: str = "rf") -> TrackResult:
    """Filter a ``(n, 3)`` sequence of positions; rows with NaN are missing."""
    zs = np.asarray(measurements, dtype=float).reshape(-1, 3)
    tracker = MarkerTracker(model, params, kind)
    n, d = len(zs), model.F.shape[0]
    states = np.full((n, d), np.nan)
    covs = np.full((n, d, d), np.nan)
    pred = np.zeros(n, dtype=bool)
    for i, z in enumerate(zs):
        est = tracker.step(z)
        if est is None:
            continue
        states[i], covs[i], pred[i] = est.x, est.P, est.predicted_only
    return TrackResult(states, covs, pred)


def track_markers(
    measurements, model: MotionModel, params: RobustParams | None = None, kind: str = "rf",
    to_world: Extrinsics | None = None,
) -> tuple[list[TrackResult], list[Pose | None]]:
    """Track three markers independently and rebuild the pose from the filtered positions.

    ``measurements`` has shape ``(n, 3, 3)`` (frame, marker, xyz). Poses are
    computed in the frame given by ``to_world`` (identity by default), which
    must be z-up.
    """
    m = np.asarray(measurements, dtype=float)
    results = [track_marker(m[:, j], model, params, kind) for j in range(3)]
    e = to_world or Extrinsics.identity()
    poses = []
    for i in range(len(m)):
        pts = [r.positions[i] for r in results]
        if any(not np.all(np.isfinite(p)) for p in pts):
            poses.append(None)
            continue
        poses.append(compute_pose(tuple(e.apply(p) for p in pts)))
    return results, poses

