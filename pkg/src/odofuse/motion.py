"""Shared data containers: IMU sample streams and pose trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ImuSample:
    """One timestamped (accel, gyro, mag) triple in the device frame."""

    t: float
    accel: np.ndarray  # m/s^2, specific force
    gyro: np.ndarray  # rad/s
    mag: np.ndarray  # microtesla, calibrated or raw depending on provenance


@dataclass
class ImuSequence:
    """Column-oriented IMU stream; rows align across all arrays."""

    t: np.ndarray  # (N,) seconds, strictly increasing
    accel: np.ndarray  # (N, 3)
    gyro: np.ndarray  # (N, 3)
    mag: np.ndarray  # (N, 3)

    def __post_init__(self):
        n = len(self.t)
        for name in ("accel", "gyro", "mag"):
            arr = getattr(self, name)
            if arr.shape != (n, 3):
                raise ValueError(f"{name} must have shape ({n}, 3), got {arr.shape}")
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dt(self) -> float:
        if len(self.t) < 2:
            raise ValueError("need at least two samples for a sample period")
        return float(np.median(np.diff(self.t)))

    def sample(self, i: int) -> ImuSample:
        return ImuSample(float(self.t[i]), self.accel[i].copy(), self.gyro[i].copy(), self.mag[i].copy())

    def slice(self, start: int, stop: int) -> "ImuSequence":
        return ImuSequence(self.t[start:stop], self.accel[start:stop], self.gyro[start:stop], self.mag[start:stop])

    def with_mag(self, mag: np.ndarray) -> "ImuSequence":
        return ImuSequence(self.t, self.accel, self.gyro, mag)


@dataclass
class Trajectory:
    """Time-indexed poses: positions (2D or 3D) plus optional orientations.

    ``quat`` rows are world-from-device unit quaternions (w, x, y, z).
    ``accel_world`` optionally carries the analytic world-frame acceleration of
    a synthetic path so sensor synthesis does not have to differentiate
    positions numerically.
    """

    t: np.ndarray
    pos: np.ndarray
    quat: np.ndarray | None = None
    accel_world: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.t)
        if self.pos.shape[0] != n or self.pos.shape[1] not in (2, 3):
            raise ValueError(f"pos must be (N, 2) or (N, 3) with N={n}, got {self.pos.shape}")
        if self.quat is not None and self.quat.shape != (n, 4):
            raise ValueError(f"quat must have shape ({n}, 4), got {self.quat.shape}")
        if self.accel_world is not None and self.accel_world.shape != (n, 3):
            raise ValueError("accel_world must be (N, 3)")
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t)))

    @property
    def xy(self) -> np.ndarray:
        return self.pos[:, :2]

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(
            self.t[start:stop],
            self.pos[start:stop],
            None if self.quat is None else self.quat[start:stop],
            None if self.accel_world is None else self.accel_world[start:stop],
        )
