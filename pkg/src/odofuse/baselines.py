"""Classical reference estimators: gyro integration, dead reckoning,
a Madgwick-style complementary filter, and step-counting PDR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, filtfilt, find_peaks

from .motion import ImuSequence, Trajectory
from .quat import (
    UnitQuaternion,
    boxplus,
    rotate_vector,
    rotation_matrices,
    yaw_arr,
)
from .simkit import GRAVITY


def gyro_integrate(imu: ImuSequence, q0: UnitQuaternion) -> Trajectory:
    """Pure gyroscope propagation: q_{k+1} = q_k boxplus (omega_k * dt)."""
    n = len(imu)
    dt = imu.dt
    quats = np.empty((n, 4))
    q = q0
    quats[0] = q
    for k in range(1, n):
        q = boxplus(q, imu.gyro[k - 1] * dt)
        quats[k] = q
    return Trajectory(imu.t.copy(), np.zeros((n, 2)), quats)


def dead_reckon(imu: ImuSequence, orientation: Trajectory, gravity=GRAVITY, v0=None) -> Trajectory:
    """Rotate specific force to world, remove gravity, trapezoid-integrate twice.

    Starts from rest unless an initial world velocity ``v0`` is given.
    """
    if orientation.quat is None or len(orientation) != len(imu):
        raise ValueError("need one orientation per IMU sample")
    dt = imu.dt
    rot = rotation_matrices(orientation.quat)
    a_world = np.einsum("nij,nj->ni", rot, imu.accel) + np.asarray(gravity)
    vel = np.zeros_like(a_world) if v0 is None else np.tile(np.asarray(v0, dtype=float), (len(imu), 1))
    vel[1:] += np.cumsum(0.5 * (a_world[1:] + a_world[:-1]) * dt, axis=0)
    pos = np.zeros_like(vel)
    pos[1:] = np.cumsum(0.5 * (vel[1:] + vel[:-1]) * dt, axis=0)
    return Trajectory(imu.t.copy(), pos, orientation.quat.copy())


def madgwick_update(q: UnitQuaternion, accel, gyro, dt: float, gain: float) -> UnitQuaternion:
    """One complementary-filter step: gyro propagation blended with a
    spherical step rotating the predicted gravity direction toward the
    measured acceleration direction (weight = gain)."""
    if not 0.0 <= gain <= 1.0:
        raise ValueError("gain must be in [0, 1]")
    q = boxplus(q, np.asarray(gyro, dtype=float) * dt)
    if gain == 0.0:
        return q
    a = np.asarray(accel, dtype=float)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return q  # no gravity observation this step
    measured_up = a / norm
    predicted_up = rotate_vector(q.conjugate(), np.array([0.0, 0.0, 1.0]))
    cross = np.cross(measured_up, predicted_up)
    s = np.linalg.norm(cross)
    if s == 0.0:
        return q
    angle = np.arctan2(s, float(measured_up @ predicted_up))
    return boxplus(q, gain * angle * cross / s)


def madgwick_track(imu: ImuSequence, q0: UnitQuaternion, gain: float = 0.05) -> Trajectory:
    """Run the complementary filter over a whole sequence."""
    n = len(imu)
    dt = imu.dt
    quats = np.empty((n, 4))
    q = q0
    quats[0] = q
    for k in range(1, n):
        q = madgwick_update(q, imu.accel[k], imu.gyro[k - 1], dt, gain)
        quats[k] = q
    return Trajectory(imu.t.copy(), np.zeros((n, 2)), quats)


@dataclass
class PdrConfig:
    stride: float = 0.67  # meters per detected step
    lowpass_hz: float = 3.0
    prominence: float = 1.0  # m/s^2 on the filtered accel magnitude
    min_interval: float = 0.3  # seconds between steps

    def __post_init__(self):
        if self.stride <= 0 or self.min_interval <= 0:
            raise ValueError("stride and min_interval must be positive")


def detect_steps(imu: ImuSequence, cfg: PdrConfig) -> np.ndarray:
    """Indices of detected steps: peaks of the low-passed accel magnitude."""
    mag = np.linalg.norm(imu.accel, axis=1)
    fs = 1.0 / imu.dt
    ba = butter(2, cfg.lowpass_hz, fs=fs)
    filtered = filtfilt(*ba, mag - np.mean(mag))
    distance = max(1, int(round(cfg.min_interval * fs)))
    peaks, _ = find_peaks(filtered, prominence=cfg.prominence, distance=distance)
    return peaks


def pdr(imu: ImuSequence, heading, cfg: PdrConfig | None = None) -> Trajectory:
    """Step-and-stride dead reckoning.

    ``heading`` is either a per-sample yaw array (radians) or an orientation
    Trajectory whose quaternion yaw is used. Position advances by one stride
    along the heading at every detected step.
    """
    cfg = cfg or PdrConfig()
    if isinstance(heading, Trajectory):
        if heading.quat is None:
            raise ValueError("heading trajectory must carry orientations")
        yaw = yaw_arr(heading.quat)
    else:
        yaw = np.asarray(heading, dtype=float)
    if len(yaw) != len(imu):
        raise ValueError("need one heading per IMU sample")
    steps = detect_steps(imu, cfg)
    pos = np.zeros((len(imu), 2))
    here = np.zeros(2)
    prev = 0
    for idx in steps:
        pos[prev:idx] = here
        here = here + cfg.stride * np.array([np.cos(yaw[idx]), np.sin(yaw[idx])])
        prev = idx
    pos[prev:] = here
    return Trajectory(imu.t.copy(), pos)
