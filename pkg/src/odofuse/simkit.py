"""Synthetic ground truth, IMU/magnetometer synthesis, mag calibration, dataset I/O.

Synthetic walks are built from cubic splines through sparse knots, so positions
are C2 and the world-frame acceleration is available analytically (no numeric
differentiation of positions). Gyro streams are defined as the exact manifold
difference of consecutive orientations divided by the sample period, which
makes integration round-trips close to float precision.

World frame: z up, gravity (0, 0, -9.80665) m/s^2. Accelerometers measure
specific force f = R^T (a_world - g). Gyro sample k is the body rate over
[t_k, t_{k+1}).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import butter, filtfilt

from .motion import ImuSequence, Trajectory
from .quat import boxminus_arr, from_euler_zyx, normalize_arr, rotation_matrices

GRAVITY = np.array([0.0, 0.0, -9.80665])
DEFAULT_BASE_FIELD = np.array([22.0, 0.0, -45.0])  # microtesla, mid-latitude

DATASET_COLUMNS = ["t", "ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz",
                   "qw", "qx", "qy", "qz", "px", "py", "pz"]
IMU_COLUMNS = DATASET_COLUMNS[:10]
POSE_COLUMNS = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]


class DataFormatError(ValueError):
    """Malformed dataset file (bad columns, rows, timestamps, or quaternions)."""


class CalibrationError(ValueError):
    """Ellipsoid fit failed; usually insufficient orientation coverage."""


# ---------------------------------------------------------------------------
# sensor and environment models
# ---------------------------------------------------------------------------


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    return a.copy()


@dataclass
class SensorModel:
    """IMU imperfection model; noise values are per-sample standard deviations."""

    rate: float = 100.0
    gyro_noise: float = 0.0  # rad/s
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))  # rad/s
    accel_noise: float = 0.0  # m/s^2
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))  # m/s^2
    mag_noise: float = 0.0  # microtesla
    hard_iron: np.ndarray = field(default_factory=lambda: np.zeros(3))  # microtesla
    soft_iron: np.ndarray = field(default_factory=lambda: np.eye(3))
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("sample rate must be positive")
        self.gyro_bias = _vec3(self.gyro_bias)
        self.accel_bias = _vec3(self.accel_bias)
        self.hard_iron = _vec3(self.hard_iron)
        self.soft_iron = np.asarray(self.soft_iron, dtype=float).reshape(3, 3).copy()
        self.gravity = _vec3(self.gravity)
        if abs(np.linalg.det(self.soft_iron)) < 1e-12:
            raise ValueError("soft-iron matrix must be invertible")

    def with_biases(self, rng: np.random.Generator, gyro_sigma: float, accel_sigma: float) -> "SensorModel":
        """Copy with per-axis constant biases drawn from the given generator."""
        return replace(
            self,
            gyro_bias=rng.normal(0.0, gyro_sigma, 3),
            accel_bias=rng.normal(0.0, accel_sigma, 3),
        )


@dataclass
class MagneticMap:
    """Base Earth field plus smooth position-keyed Gaussian-bump disturbances."""

    base_field: np.ndarray = field(default_factory=lambda: DEFAULT_BASE_FIELD.copy())
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # (K, 2) meters
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))  # (K, 3) microtesla
    widths: np.ndarray = field(default_factory=lambda: np.zeros(0))  # (K,) meters
    max_perturbation: float = 0.0

    def __post_init__(self):
        self.base_field = _vec3(self.base_field)
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float).reshape(-1, 3)
        self.widths = np.asarray(self.widths, dtype=float).reshape(-1)
        total = float(np.sum(np.linalg.norm(self.amplitudes, axis=1)))
        if self.max_perturbation and total > self.max_perturbation + 1e-9:
            raise ValueError("bump amplitudes exceed the configured perturbation bound")

    @classmethod
    def random(cls, seed: int, n_bumps: int = 6, max_perturbation: float = 5.0,
               area: float = 30.0, width_range=(3.0, 10.0)) -> "MagneticMap":
        rng = np.random.default_rng(seed)
        centers = rng.uniform(-area / 2, area / 2, (n_bumps, 2))
        amps = rng.standard_normal((n_bumps, 3))
        norms = np.linalg.norm(amps, axis=1)
        amps *= (max_perturbation / n_bumps) / norms[:, None]  # worst-case sum == bound
        widths = rng.uniform(*width_range, n_bumps)
        return cls(DEFAULT_BASE_FIELD.copy(), centers, amps, widths, max_perturbation)

    def world_field(self, pos: np.ndarray) -> np.ndarray:
        """Field at (N, >=2) positions; only the horizontal coordinates key the bumps."""
        pos = np.atleast_2d(np.asarray(pos, dtype=float))[:, :2]
        out = np.tile(self.base_field, (len(pos), 1))
        for c, a, w in zip(self.centers, self.amplitudes, self.widths):
            d2 = np.sum((pos - c) ** 2, axis=1)
            out += np.exp(-d2 / (2.0 * w * w))[:, None] * a
        return out


# ---------------------------------------------------------------------------
# trajectory generation
# ---------------------------------------------------------------------------


@dataclass
class WalkProfile:
    """Piecewise walk/pause/turn plan with speed-coupled gait oscillations.

    Cadence, vertical bounce, fore-aft surge, and body sway all scale with the
    instantaneous walking speed (as they do for real pedestrians); that
    coupling is what makes per-window displacement observable to a learned
    position model.
    """

    speed_min: float = 0.9
    speed_max: float = 1.5
    segment_min: float = 6.0
    segment_max: float = 14.0
    pause_prob: float = 0.3
    pause_min: float = 1.0
    pause_max: float = 3.0
    turn_sigma: float = 1.0  # rad, applied between segments
    heading_drift: float = 0.05  # rad per knot while walking
    cadence: float = 1.9  # Hz step frequency at 1 m/s; scales with sqrt(speed)
    bounce_amp: float = 0.020  # m vertical oscillation at 1 m/s
    surge_amp: float = 0.022  # m fore-aft within-step oscillation at 1 m/s
    surge_phase: float = 0.9  # rad, fixed phase lead vs the vertical bounce
    sway_roll: float = 0.06  # rad at 1 m/s
    sway_pitch: float = 0.04  # rad at 1 m/s
    device_yaw_offset: float = 0.0  # device yaw relative to walking heading
    knot_dt: float = 0.5
    v_max: float = 3.0  # continuity bound used by validation/tests


def _moving_average(x: np.ndarray, window: int, passes: int = 2) -> np.ndarray:
    kernel = np.ones(window) / window
    for _ in range(passes):
        x = np.convolve(np.pad(x, (window, window), mode="edge"), kernel, mode="same")[window:-window]
    return x


def gen_trajectory(seed: int = 0, duration: float = 60.0, profile="walk", rate: float = 100.0) -> Trajectory:
    """Generate a smooth C2 ground-truth pose path sampled at ``rate``.

    Profiles: "walk" (default, or a WalkProfile instance), "static" (constant
    pose drawn from the seed), "tumble" (stationary position, sweeping
    orientation; useful for magnetometer calibration coverage).
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    rng = np.random.default_rng(seed)

    if profile == "static":
        yaw = rng.uniform(-np.pi, np.pi)
        tilt = rng.uniform(-0.4, 0.4, 2)
        quat = from_euler_zyx(np.full(n, yaw), np.full(n, tilt[0]), np.full(n, tilt[1]))
        return Trajectory(t, np.zeros((n, 3)), quat, np.zeros((n, 3)))

    if profile == "tumble":
        yaw = 1.7 * t + rng.uniform(0, 2 * np.pi)
        pitch = 1.3 * np.sin(0.9 * t + rng.uniform(0, 2 * np.pi))
        roll = 2.3 * t + rng.uniform(0, 2 * np.pi)
        quat = from_euler_zyx(yaw, pitch, roll)
        return Trajectory(t, np.zeros((n, 3)), quat, np.zeros((n, 3)))

    prof = WalkProfile() if profile == "walk" else profile
    if not isinstance(prof, WalkProfile):
        raise ValueError(f"unknown profile {profile!r}")

    # knot-level plan: piecewise-constant speed/heading per segment; the first
    # second or so is a standstill so integrations from rest are well-posed
    tk = np.arange(0.0, duration + 4 * prof.knot_dt, prof.knot_dt)
    heading = rng.uniform(-np.pi, np.pi)
    speeds = np.zeros(len(tk))
    heads = np.full(len(tk), heading)
    cursor = rng.uniform(2.0, 3.0)  # longer than the smoothing spread below
    walking = True
    while cursor < tk[-1]:
        if walking:
            dur = rng.uniform(prof.segment_min, prof.segment_max)
            v = rng.uniform(prof.speed_min, prof.speed_max)
        else:
            dur = rng.uniform(prof.pause_min, prof.pause_max)
            v = 0.0
        mask = (tk >= cursor) & (tk < cursor + dur)
        speeds[mask] = v
        heads[mask] = heading
        cursor += dur
        if walking and rng.random() < prof.pause_prob:
            walking = False
        else:
            walking = True
            heading += rng.normal(0.0, prof.turn_sigma)
    heads = heads + np.cumsum(rng.normal(0.0, prof.heading_drift, len(tk)) * (speeds > 0))

    speeds = _moving_average(speeds, window=3)
    heads = _moving_average(heads, window=3)

    vel_k = speeds[:, None] * np.stack([np.cos(heads), np.sin(heads)], axis=1)
    pos_k = np.zeros_like(vel_k)
    pos_k[1:] = np.cumsum(0.5 * (vel_k[1:] + vel_k[:-1]) * prof.knot_dt, axis=0)

    # gait phase advances at a speed-dependent cadence
    freq_k = prof.cadence * np.sqrt(np.maximum(speeds, 0.25))
    phase_k = np.zeros(len(tk))
    phase_k[1:] = np.cumsum(np.pi * (freq_k[1:] + freq_k[:-1]) * prof.knot_dt)  # 2*pi*trapezoid

    # clamped ends: the walk starts (and formally ends) at rest, so double
    # integration of the synthesized accelerometer from rest is well-posed
    xy_spline = CubicSpline(tk, pos_k, axis=0, bc_type="clamped")
    speed_spline = CubicSpline(tk, speeds, bc_type="clamped")
    head_spline = CubicSpline(tk, heads, bc_type="natural")
    phase_spline = CubicSpline(tk, phase_k, bc_type="natural")

    xy = xy_spline(t)
    a_xy = xy_spline(t, 2)
    sp = speed_spline(t)  # amplitude envelope: oscillations scale with speed
    sp_d1 = speed_spline(t, 1)
    sp_d2 = speed_spline(t, 2)
    phi = phase_spline(t) + rng.uniform(0, 2 * np.pi)
    phi_d1 = phase_spline(t, 1)
    phi_d2 = phase_spline(t, 2)

    def osc(amp, phase_off):
        """amp*speed(t)*sin(phi + off) with analytic first/second derivatives."""
        a = amp * sp
        a_d1 = amp * sp_d1
        a_d2 = amp * sp_d2
        arg = phi + phase_off
        s = np.sin(arg)
        c = np.cos(arg)
        value = a * s
        first = a_d1 * s + a * phi_d1 * c
        second = a_d2 * s + 2.0 * a_d1 * phi_d1 * c + a * (phi_d2 * c - phi_d1 * phi_d1 * s)
        return value, first, second

    z, _, a_z = osc(prof.bounce_amp, 0.0)
    u, u_d1, a_surge = osc(prof.surge_amp, prof.surge_phase)

    # fore-aft surge rides along the heading; differentiate u*cos(h), u*sin(h)
    h = head_spline(t)
    h_d1 = head_spline(t, 1)
    h_d2 = head_spline(t, 2)
    ch, sh = np.cos(h), np.sin(h)
    ax_surge = a_surge * ch - 2.0 * u_d1 * h_d1 * sh - u * (h_d2 * sh + h_d1 * h_d1 * ch)
    ay_surge = a_surge * sh + 2.0 * u_d1 * h_d1 * ch + u * (h_d2 * ch - h_d1 * h_d1 * sh)

    pos = np.column_stack([xy[:, 0] + u * ch, xy[:, 1] + u * sh, z])
    accel_world = np.column_stack([a_xy[:, 0] + ax_surge, a_xy[:, 1] + ay_surge, a_z])

    yaw = h + prof.device_yaw_offset
    roll = prof.sway_roll * sp * np.sin(phi + rng.uniform(0, 2 * np.pi))
    pitch = prof.sway_pitch * sp * np.sin(2 * phi + rng.uniform(0, 2 * np.pi))
    quat = from_euler_zyx(yaw, pitch, roll)
    return Trajectory(t, pos, quat, accel_world)


# ---------------------------------------------------------------------------
# IMU synthesis
# ---------------------------------------------------------------------------


def body_rates_from_quats(quat: np.ndarray, dt: float) -> np.ndarray:
    """Body angular velocity: boxminus of consecutive orientations over dt."""
    omega = np.zeros((len(quat), 3))
    omega[:-1] = boxminus_arr(quat[1:], quat[:-1]) / dt
    if len(quat) > 1:
        omega[-1] = omega[-2]
    return omega


def synthesize_imu(traj: Trajectory, sensor: SensorModel, mag_map: MagneticMap | None = None,
                   seed: int = 0) -> ImuSequence:
    """Device-frame IMU streams for a ground-truth trajectory.

    accel = R^T (a_world - g) + bias + noise, gyro = body rate + bias + noise,
    mag = soft_iron @ R^T B(pos) + hard_iron + noise.
    """
    if traj.quat is None:
        raise ValueError("trajectory must carry orientations for IMU synthesis")
    n = len(traj)
    dt = traj.dt
    rng = np.random.default_rng(seed)
    rot = rotation_matrices(traj.quat)  # world-from-device

    omega = body_rates_from_quats(traj.quat, dt)
    gyro = omega + sensor.gyro_bias
    if sensor.gyro_noise:
        gyro = gyro + rng.normal(0.0, sensor.gyro_noise, (n, 3))

    if traj.accel_world is not None:
        a_world = traj.accel_world
    else:
        pos3 = traj.pos if traj.pos.shape[1] == 3 else np.column_stack([traj.pos, np.zeros(n)])
        a_world = np.zeros((n, 3))
        a_world[1:-1] = (pos3[2:] - 2 * pos3[1:-1] + pos3[:-2]) / dt**2
        a_world[0], a_world[-1] = a_world[1], a_world[-2]
    f_body = np.einsum("nji,nj->ni", rot, a_world - sensor.gravity)
    accel = f_body + sensor.accel_bias
    if sensor.accel_noise:
        accel = accel + rng.normal(0.0, sensor.accel_noise, (n, 3))

    if mag_map is None:
        mag_map = MagneticMap()
    b_world = mag_map.world_field(traj.pos)
    b_body = np.einsum("nji,nj->ni", rot, b_world)
    mag = b_body @ sensor.soft_iron.T + sensor.hard_iron
    if sensor.mag_noise:
        mag = mag + rng.normal(0.0, sensor.mag_noise, (n, 3))

    return ImuSequence(traj.t.copy(), accel, gyro, mag)


# ---------------------------------------------------------------------------
# magnetometer ellipsoid calibration
# ---------------------------------------------------------------------------


@dataclass
class MagCalibration:
    """Hard-iron offset and soft-iron-inverse map: B_cal = matrix @ (B_raw - offset)."""

    offset: np.ndarray
    matrix: np.ndarray

    def to_json(self) -> str:
        return json.dumps({"offset": self.offset.tolist(), "matrix": self.matrix.tolist()}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MagCalibration":
        obj = json.loads(text)
        return cls(np.asarray(obj["offset"], dtype=float), np.asarray(obj["matrix"], dtype=float))

    @classmethod
    def identity(cls) -> "MagCalibration":
        return cls(np.zeros(3), np.eye(3))


def fit_mag_ellipsoid(samples: np.ndarray) -> MagCalibration:
    """Least-squares quadric fit of raw magnetometer samples.

    Returns the ellipsoid center (hard iron) and a symmetric map that spheres
    the samples while preserving their geometric-mean radius. The rotational
    and overall-scale parts of a physical soft-iron distortion are unobservable
    from magnitude geometry alone; a symmetric, volume-preserving distortion is
    recovered exactly.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise CalibrationError(f"expected (N, 3) samples, got {pts.shape}")
    if len(pts) < 9:
        raise CalibrationError("need at least 9 samples for an ellipsoid fit")
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    design = np.column_stack(
        [x * x, y * y, z * z, 2 * x * y, 2 * x * z, 2 * y * z, 2 * x, 2 * y, 2 * z]
    )
    coef, _, rank, _ = np.linalg.lstsq(design, np.ones(len(pts)), rcond=None)
    if rank < 9:
        raise CalibrationError("degenerate fit: samples do not span enough orientations")
    a, b, c, d, e, f, g, h, i = coef
    quad = np.array([[a, d, e], [d, b, f], [e, f, c]])
    center = -np.linalg.solve(quad, np.array([g, h, i]))
    k = 1.0 + center @ quad @ center
    shape = quad / k
    lam, vec = np.linalg.eigh(shape)
    if np.any(lam <= 0):
        raise CalibrationError(
            "fit is not an ellipsoid (non-positive shape matrix); collect samples "
            "spanning more orientations"
        )
    sphering = vec @ np.diag(np.sqrt(lam)) @ vec.T
    mean_radius = float(np.prod(lam) ** (-1.0 / 6.0))
    return MagCalibration(offset=center, matrix=mean_radius * sphering)


def apply_mag_calibration(mag: np.ndarray, cal: MagCalibration) -> np.ndarray:
    """Calibrated field: matrix @ (raw - offset); works on (3,) or (N, 3)."""
    raw = np.asarray(mag, dtype=float)
    return (raw - cal.offset) @ cal.matrix.T


# ---------------------------------------------------------------------------
# trajectory smoothing (for ingested real data)
# ---------------------------------------------------------------------------


def smooth_trajectory(traj: Trajectory, cutoff_hz: float, order: int = 2) -> Trajectory:
    """Zero-phase Butterworth low-pass of the positions; orientations untouched."""
    fs = 1.0 / traj.dt
    if not 0 < cutoff_hz < fs / 2:
        raise ValueError("cutoff must be below the Nyquist rate")
    ba = butter(order, cutoff_hz, fs=fs)
    pos = filtfilt(*ba, traj.pos, axis=0)
    return Trajectory(traj.t.copy(), pos, None if traj.quat is None else traj.quat.copy())


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------


def save_dataset_csv(path, imu: ImuSequence, truth: Trajectory | None = None) -> None:
    """One trajectory per file; full 17 columns with truth, first 10 without."""
    path = Path(path)
    if truth is not None:
        if truth.quat is None:
            raise ValueError("ground-truth trajectory must include orientations")
        pos3 = truth.pos if truth.pos.shape[1] == 3 else np.column_stack([truth.pos, np.zeros(len(truth))])
        data = np.column_stack([imu.t, imu.accel, imu.gyro, imu.mag, truth.quat, pos3])
        header = ",".join(DATASET_COLUMNS)
    else:
        data = np.column_stack([imu.t, imu.accel, imu.gyro, imu.mag])
        header = ",".join(IMU_COLUMNS)
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def save_trajectory_csv(path, traj: Trajectory) -> None:
    """Pose file: t,px,py,pz,qw,qx,qy,qz (orientation rows optional -> identity)."""
    n = len(traj)
    pos3 = traj.pos if traj.pos.shape[1] == 3 else np.column_stack([traj.pos, np.zeros(n)])
    quat = traj.quat if traj.quat is not None else np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    data = np.column_stack([traj.t, pos3, quat])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(POSE_COLUMNS), comments="")


def _read_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        names = [c.strip() for c in header.split(",")]
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError:
            fh.seek(0)
            fh.readline()
            for lineno, line in enumerate(fh, start=2):
                fields = line.strip().split(",")
                if len(fields) != len(names):
                    raise DataFormatError(
                        f"{path}: line {lineno}: expected {len(names)} fields, got {len(fields)}"
                    ) from None
                for name, fval in zip(names, fields):
                    try:
                        float(fval)
                    except ValueError:
                        raise DataFormatError(
                            f"{path}: line {lineno}: column {name!r} is not a number: {fval!r}"
                        ) from None
            raise DataFormatError(f"{path}: malformed numeric data") from None
    if data.size == 0:
        raise DataFormatError(f"{path}: no data rows")
    return names, data


def _validate_quats(path, quat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(quat, axis=1)
    drift = np.abs(norms - 1.0)
    worst = float(drift.max())
    if worst > 1e-3:
        raise DataFormatError(f"{path}: ground-truth quaternion norm drifts by {worst:.2e} (> 1e-3)")
    if worst > 1e-9:
        return normalize_arr(quat, canonical=False)
    return quat


def load_dataset_file(path) -> tuple[ImuSequence, Trajectory | None]:
    path = Path(path)
    names, data = _read_csv(path)
    if names == DATASET_COLUMNS:
        has_truth = True
    elif names == IMU_COLUMNS:
        has_truth = False
    else:
        missing = [c for c in DATASET_COLUMNS if c not in names]
        raise DataFormatError(f"{path}: unexpected columns; missing {missing[:3]}... expected "
                              f"'{','.join(DATASET_COLUMNS)}' or the first 10 of them")
    t = data[:, 0]
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        bad = int(np.argmin(np.diff(t) > 0)) + 2
        raise DataFormatError(f"{path}: non-monotone timestamps near line {bad}")
    imu = ImuSequence(t, data[:, 1:4], data[:, 4:7], data[:, 7:10])
    truth = None
    if has_truth:
        quat = _validate_quats(path, data[:, 10:14])
        truth = Trajectory(t, data[:, 14:17], quat)
    return imu, truth


def load_dataset(path) -> list[tuple[ImuSequence, Trajectory | None]]:
    """Load one file or every *.csv in a directory (sorted by name)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise DataFormatError(f"{path}: no .csv files found")
        return [load_dataset_file(f) for f in files]
    return [load_dataset_file(path)]


def load_trajectory_csv(path) -> Trajectory:
    """Load a pose file, or extract the ground-truth pose from a dataset file."""
    path = Path(path)
    names, data = _read_csv(path)
    if names == POSE_COLUMNS:
        quat = _validate_quats(path, data[:, 4:8])
        return Trajectory(data[:, 0], data[:, 1:4], quat)
    if names == DATASET_COLUMNS:
        _, truth = load_dataset_file(path)
        if truth is None:
            raise DataFormatError(f"{path}: no ground-truth columns")
        return truth
    raise DataFormatError(f"{path}: expected columns '{','.join(POSE_COLUMNS)}'")
