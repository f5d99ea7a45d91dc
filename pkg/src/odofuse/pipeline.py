"""End-to-end glue: calibration application, fused inference, benchmarking."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .ekf import EkfConfig, FilterResult, run_filter
from .motion import ImuSequence, Trajectory
from .orientation_net import OrientationNet
from .position_net import PositionNet, chain_windows, world_frame_inputs
from .quat import UnitQuaternion
from .simkit import MagCalibration, apply_mag_calibration


def calibrated(imu: ImuSequence, cal: MagCalibration | None) -> ImuSequence:
    """Apply a magnetometer calibration to the stream (None -> unchanged)."""
    if cal is None:
        return imu
    return imu.with_mag(apply_mag_calibration(imu.mag, cal))


def fused_orientation(
    orient_net: OrientationNet,
    imu: ImuSequence,
    cfg: EkfConfig | None = None,
    update_every: int = 10,
    q0: UnitQuaternion | None = None,
) -> FilterResult:
    """Gyro propagation fused with network measurement updates for one trajectory."""
    cfg = cfg or EkfConfig(dt=imu.dt)
    return run_filter(imu, orient_net, cfg, update_every=update_every, q0=q0)


def infer_trajectory(
    orient_net: OrientationNet,
    pos_net: PositionNet,
    imu: ImuSequence,
    cfg: EkfConfig | None = None,
    update_every: int = 10,
    window: int = 200,
    q0: UnitQuaternion | None = None,
) -> Trajectory:
    """Full pipeline: fused orientation, world-frame conversion, chained windows."""
    result = fused_orientation(orient_net, imu, cfg, update_every, q0)
    quats = result.trajectory.quat
    inputs = world_frame_inputs(imu, quats)
    pos = chain_windows(pos_net, inputs.astype(np.float32), window=window)
    return Trajectory(imu.t.copy(), pos, quats)


@dataclass
class BenchResult:
    samples: int
    elapsed_s: float

    @property
    def ms_per_100(self) -> float:
        return 1000.0 * self.elapsed_s / (self.samples / 100.0)


def bench_pipeline(
    orient_net: OrientationNet,
    pos_net: PositionNet,
    samples: int = 2000,
    seed: int = 0,
    repeats: int = 3,
) -> BenchResult:
    """Time full-pipeline inference on a synthetic stream; best of ``repeats``."""
    from .simkit import SensorModel, gen_trajectory, synthesize_imu

    traj = gen_trajectory(seed=seed, duration=samples / 100.0, rate=100.0)
    imu = synthesize_imu(traj, SensorModel(gyro_noise=0.005, accel_noise=0.05, mag_noise=0.5), seed=seed)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        infer_trajectory(orient_net, pos_net, imu)
        best = min(best, time.perf_counter() - t0)
    return BenchResult(samples=len(imu), elapsed_s=best)
