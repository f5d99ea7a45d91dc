"""Quaternion-manifold EKF fusing gyro propagation with orientation measurements.

State is a unit quaternion plus a 3x3 tangent-space covariance P. Propagation
applies the body-frame increment q boxplus (omega * dt) and grows P additively
by the process noise Q (no state-transition Jacobian on P; that additive form
is the filter this package implements by design). The measurement model is the
identity on the manifold: innovation = q_meas boxminus q_pred, gain
K = P (P + R)^-1, update q boxplus K @ innovation, P <- (I - K) P followed by
symmetrization and eigenvalue clamping.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .motion import ImuSequence, Trajectory
from .orientation_net import OrientationEstimate
from .quat import UnitQuaternion, boxminus, boxplus

DEFAULT_PROCESS_NOISE = 0.005  # rad^2 per step on each tangent axis


@dataclass
class EkfConfig:
    process_noise: np.ndarray = field(default_factory=lambda: DEFAULT_PROCESS_NOISE * np.eye(3))
    dt: float = 0.01  # seconds per sample

    def __post_init__(self):
        q = np.asarray(self.process_noise, dtype=float)
        if q.shape == ():
            q = float(q) * np.eye(3)
        if q.shape != (3, 3):
            raise ValueError("process noise must be a scalar or a 3x3 matrix")
        if not np.allclose(q, q.T) or np.any(np.linalg.eigvalsh(q) <= 0):
            raise ValueError("process noise must be symmetric positive definite")
        if self.dt <= 0:
            raise ValueError("sample period must be positive")
        self.process_noise = q


@dataclass
class EkfState:
    quat: UnitQuaternion
    cov: np.ndarray  # (3, 3) rad^2, tangent space

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float).reshape(3, 3)


def _clamp_psd(p: np.ndarray) -> np.ndarray:
    """Symmetrize and clamp eigenvalues at zero (tolerating -1e-12 noise)."""
    p = 0.5 * (p + p.T)
    lam, vec = np.linalg.eigh(p)
    if lam[0] >= 0.0:
        return p
    lam = np.clip(lam, 0.0, None)
    return (vec * lam) @ vec.T


def propagate(state: EkfState, omega, cfg: EkfConfig) -> EkfState:
    """Gyro process update: body-frame increment plus additive covariance growth."""
    q = boxplus(state.quat, np.asarray(omega, dtype=float) * cfg.dt)
    return EkfState(q, state.cov + cfg.process_noise)


def measurement_update(state: EkfState, meas: OrientationEstimate) -> EkfState:
    """Fuse a network-predicted orientation/covariance pair.

    A singular innovation covariance (collapsed P + R) skips the update with a
    warning instead of corrupting the state.
    """
    p = state.cov
    s = p + meas.cov
    try:
        # K = P (P + R)^-1 without forming the inverse
        k = np.linalg.solve(s.T, p.T).T
    except np.linalg.LinAlgError:
        warnings.warn("singular innovation covariance; skipping measurement update")
        return state
    if not np.all(np.isfinite(k)):
        warnings.warn("non-finite Kalman gain; skipping measurement update")
        return state
    innovation = boxminus(meas.quat, state.quat)
    q = boxplus(state.quat, k @ innovation)
    cov = _clamp_psd((np.eye(3) - k) @ p)
    return EkfState(q, cov)


@dataclass
class FilterResult:
    trajectory: Trajectory  # fused orientation per sample (positions zero)
    covariances: np.ndarray  # (N, 3, 3) fused P per sample
    measurement_indices: np.ndarray  # sample indices where updates fired
    measurement_quats: np.ndarray  # (M, 4) raw measurement orientations
    measurement_covs: np.ndarray  # (M, 3, 3)


def run_filter(
    imu: ImuSequence,
    measurement_source=None,
    cfg: EkfConfig | None = None,
    update_every: int = 10,
    q0: UnitQuaternion | None = None,
    p0: np.ndarray | None = None,
) -> FilterResult:
    """Filter one trajectory: propagate every sample, update on a fixed cadence.

    ``measurement_source`` is anything with ``orientation_estimates(imu)``
    returning per-sample (N, 4) quaternions and (N, 3, 3) covariances (the
    orientation network, or an oracle in tests); None disables updates and the
    filter degenerates to exact gyro integration. If ``q0`` is omitted the
    first measurement initializes the state (P0 = 1.0 I); with ``q0`` given,
    P0 = 0.1 I. ``update_every`` <= 0 also disables updates.
    """
    cfg = cfg or EkfConfig()
    n = len(imu)
    if n == 0:
        raise ValueError("empty IMU sequence")

    meas_quats = meas_covs = None
    if measurement_source is not None:
        meas_quats, meas_covs = measurement_source.orientation_estimates(imu)
        if len(meas_quats) != n:
            raise ValueError("measurement source must produce one estimate per sample")
    updates_on = measurement_source is not None and update_every and update_every > 0

    if q0 is not None:
        state = EkfState(q0, 0.1 * np.eye(3) if p0 is None else np.asarray(p0, dtype=float))
    elif meas_quats is not None:
        state = EkfState(UnitQuaternion(*meas_quats[0]), 1.0 * np.eye(3) if p0 is None else np.asarray(p0, dtype=float))
    else:
        raise ValueError("need an initial orientation or a measurement source")

    quats = np.empty((n, 4))
    covs = np.empty((n, 3, 3))
    used = []
    quats[0] = state.quat
    covs[0] = state.cov
    for k in range(1, n):
        state = propagate(state, imu.gyro[k - 1], cfg)
        if updates_on and k % update_every == 0:
            meas = OrientationEstimate(UnitQuaternion(*meas_quats[k]), meas_covs[k])
            state = measurement_update(state, meas)
            used.append(k)
        if not np.all(np.isfinite(state.quat)) or not np.all(np.isfinite(state.cov)):
            raise FloatingPointError(f"filter state became non-finite at sample {k}")
        quats[k] = state.quat
        covs[k] = state.cov

    traj = Trajectory(imu.t.copy(), np.zeros((n, 2)), quats)
    used = np.asarray(used, dtype=int)
    if meas_quats is None:
        meas_sel_q = np.zeros((0, 4))
        meas_sel_c = np.zeros((0, 3, 3))
    else:
        meas_sel_q = meas_quats[used] if len(used) else np.zeros((0, 4))
        meas_sel_c = meas_covs[used] if len(used) else np.zeros((0, 3, 3))
    return FilterResult(traj, covs, used, meas_sel_q, meas_sel_c)


@dataclass
class OracleMeasurements:
    """Test helper: precomputed per-sample measurement arrays."""

    quats: np.ndarray
    covs: np.ndarray

    def orientation_estimates(self, imu: ImuSequence):
        if len(self.quats) != len(imu):
            raise ValueError("oracle measurement count does not match the sequence")
        return self.quats, self.covs
