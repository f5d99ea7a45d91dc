"""Shared fixtures: the desk-scale trained pipeline used by acceptance 5-7."""

import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))  # for oracles.py imports


@dataclass
class DeskRun:
    """Everything the acceptance criteria need from one desk-scale training."""

    train_pairs: list
    test_pairs: list
    orient_net: object
    pos_net: object
    orient_history: list
    pos_history: list
    fused_rmse: list = field(default_factory=list)  # per test trajectory, rad
    madgwick_rmse: list = field(default_factory=list)
    ours_ate: list = field(default_factory=list)  # per test trajectory, m
    dead_reckon_ate: list = field(default_factory=list)
    pdr_ate: list = field(default_factory=list)
    test_estimates: list = field(default_factory=list)  # (quats, covs) per test traj
    train_seconds: float = 0.0


DESK = {
    "n_train": 20,
    "n_test": 5,
    "duration": 120.0,
    "map_seed": 42,
    "mag_bumps": 6,
    "mag_max": 5.0,
    "mag_area": 30.0,
    "gyro_noise": 0.005,
    "accel_noise": 0.05,
    "mag_noise": 0.5,
    "gyro_bias_sigma": 0.01,
    "accel_bias_sigma": 0.05,
    "hard_iron": (12.0, -5.0, 8.0),
    "soft_iron_diag": (1.1, 0.95, 1.0 / (1.1 * 0.95)),
    "orient_epochs": 28,
    "orient_warmup": 8,
    "orient_batch": 4,
    "hidden": 32,
    # per 10 training trajectories: 8 walks, 1 long-pause loiter, 1 static;
    # the idle data teaches the position stage that no gait means no motion
    "profile_cycle": ("walk",) * 7 + ("loiter",) + ("walk",) + ("static",),
    "pos_epochs_per_stage": 3,
    "pos_batch": 32,
    "update_every": 10,
    "infer_window": 200,
    "madgwick_gain": 0.05,
}


def build_desk_dataset():
    from odofuse.motion import Trajectory
    from odofuse.simkit import (
        MagneticMap,
        SensorModel,
        WalkProfile,
        apply_mag_calibration,
        fit_mag_ellipsoid,
        gen_trajectory,
        synthesize_imu,
    )

    cfg = DESK
    mag_map = MagneticMap.random(seed=cfg["map_seed"], n_bumps=cfg["mag_bumps"],
                                 max_perturbation=cfg["mag_max"], area=cfg["mag_area"])
    soft = np.diag(cfg["soft_iron_diag"])
    bias_rng = np.random.default_rng(1000)
    loiter = WalkProfile(pause_prob=0.75, pause_min=3.0, pause_max=8.0,
                         segment_min=4.0, segment_max=8.0)
    by_name = {"walk": "walk", "static": "static", "loiter": loiter}

    pairs = []
    for i in range(cfg["n_train"] + cfg["n_test"]):
        is_train = i < cfg["n_train"]
        cycle = cfg["profile_cycle"]
        profile = by_name[cycle[i % len(cycle)]] if is_train else "walk"
        traj = gen_trajectory(seed=i, duration=cfg["duration"], profile=profile)
        sensor = SensorModel(
            gyro_noise=cfg["gyro_noise"], accel_noise=cfg["accel_noise"], mag_noise=cfg["mag_noise"],
            gyro_bias=bias_rng.normal(0, cfg["gyro_bias_sigma"], 3),
            accel_bias=bias_rng.normal(0, cfg["accel_bias_sigma"], 3),
            hard_iron=cfg["hard_iron"], soft_iron=soft,
        )
        imu = synthesize_imu(traj, sensor, mag_map, seed=500 + i)
        pairs.append((imu, Trajectory(traj.t, traj.pos, traj.quat)))

    # magnetometer calibration from a dedicated tumbling capture
    cal_traj = gen_trajectory(seed=999, duration=30.0, profile="tumble")
    cal_sensor = SensorModel(mag_noise=cfg["mag_noise"], hard_iron=cfg["hard_iron"], soft_iron=soft)
    cal_imu = synthesize_imu(cal_traj, cal_sensor, mag_map, seed=998)
    cal = fit_mag_ellipsoid(cal_imu.mag)

    pairs = [(imu.with_mag(apply_mag_calibration(imu.mag, cal)), truth) for imu, truth in pairs]
    return pairs[: cfg["n_train"]], pairs[cfg["n_train"] :]


@pytest.fixture(scope="session")
def desk():
    from odofuse.baselines import PdrConfig, dead_reckon, gyro_integrate, madgwick_track, pdr
    from odofuse.ekf import EkfConfig, run_filter
    from odofuse.metrics import ate, orientation_rmse
    from odofuse.motion import Trajectory
    from odofuse.orientation_net import OrientTrainConfig, train_orientnet
    from odofuse.pipeline import infer_trajectory
    from odofuse.position_net import PosTrainConfig, train_posnet, world_frame_inputs
    from odofuse.quat import UnitQuaternion

    cfg = DESK
    start = time.time()
    train_pairs, test_pairs = build_desk_dataset()

    orient_cfg = OrientTrainConfig(hidden=cfg["hidden"], head_hidden=cfg["hidden"],
                                   window=200, epochs=cfg["orient_epochs"],
                                   warmup_epochs=cfg["orient_warmup"],
                                   batch=cfg["orient_batch"], seed=0)
    orient_net, orient_history = train_orientnet(train_pairs, orient_cfg)

    # fused orientations over the training set feed the position module
    fused_train = [
        run_filter(imu, orient_net, EkfConfig(dt=imu.dt), update_every=cfg["update_every"]).trajectory.quat
        for imu, _ in train_pairs
    ]
    pos_cfg = PosTrainConfig(hidden=cfg["hidden"], epochs_per_stage=cfg["pos_epochs_per_stage"],
                             batch=cfg["pos_batch"], seed=0, infer_window=cfg["infer_window"])
    pos_net, pos_history = train_posnet(train_pairs, fused_train, pos_cfg)

    run = DeskRun(train_pairs, test_pairs, orient_net, pos_net, orient_history, pos_history)

    for imu, truth in test_pairs:
        q0 = UnitQuaternion(*truth.quat[0])
        est = infer_trajectory(orient_net, pos_net, imu, EkfConfig(dt=imu.dt),
                               update_every=cfg["update_every"], window=cfg["infer_window"])
        run.fused_rmse.append(orientation_rmse(est.quat, truth.quat))
        run.test_estimates.append(orient_net.orientation_estimates(imu))
        run.ours_ate.append(ate(est, truth))

        madg = madgwick_track(imu, q0, gain=cfg["madgwick_gain"])
        run.madgwick_rmse.append(orientation_rmse(madg.quat, truth.quat))

        gyro_orient = gyro_integrate(imu, q0)
        dr = dead_reckon(imu, gyro_orient)
        run.dead_reckon_ate.append(ate(dr, truth))

        step = pdr(imu, madg, PdrConfig())
        run.pdr_ate.append(ate(step, truth))

    run.train_seconds = time.time() - start
    return run


@pytest.fixture(scope="session")
def curriculum_runs():
    return run_curriculum_comparison()


def run_curriculum_comparison():
    """Median-of-3-seeds comparison: 100->2000 curriculum vs fixed-100 windows.

    Smaller dataset than the desk run (this isolates the position module;
    ground-truth orientations feed both arms identically).
    """
    from odofuse.metrics import ate
    from odofuse.motion import Trajectory
    from odofuse.position_net import PosTrainConfig, chain_windows, train_posnet, world_frame_inputs
    from odofuse.simkit import MagneticMap, SensorModel, gen_trajectory, synthesize_imu

    n_train, n_test, duration = 8, 3, 60.0
    bias_rng = np.random.default_rng(77)
    pairs = []
    for i in range(n_train + n_test):
        traj = gen_trajectory(seed=300 + i, duration=duration)
        sensor = SensorModel(gyro_noise=0.005, accel_noise=0.05, mag_noise=0.5,
                             gyro_bias=bias_rng.normal(0, 0.01, 3),
                             accel_bias=bias_rng.normal(0, 0.05, 3))
        imu = synthesize_imu(traj, sensor, seed=800 + i)
        pairs.append((imu, Trajectory(traj.t, traj.pos, traj.quat)))
    train_pairs, test_pairs = pairs[:n_train], pairs[n_train:]
    test_inputs = [world_frame_inputs(imu, truth.quat).astype(np.float32) for imu, truth in test_pairs]

    stages_curriculum = (100, 200, 500, 1000, 2000)
    epochs_per_stage = 2
    total_epochs = len(stages_curriculum) * epochs_per_stage

    def held_out_ate(net):
        values = []
        for x, (imu, truth) in zip(test_inputs, test_pairs):
            pos = chain_windows(net, x, window=200)
            values.append(ate(pos, truth.pos[:, :2]))
        return float(np.mean(values))

    curriculum_ates, fixed_ates = [], []
    for seed in range(3):
        cur_cfg = PosTrainConfig(hidden=16, stages=stages_curriculum,
                                 epochs_per_stage=epochs_per_stage, batch=16, seed=seed)
        net_cur, _ = train_posnet(train_pairs, "truth", cur_cfg)
        curriculum_ates.append(held_out_ate(net_cur))

        fixed_cfg = PosTrainConfig(hidden=16, stages=(100,),
                                   epochs_per_stage=total_epochs, batch=16, seed=seed)
        net_fixed, _ = train_posnet(train_pairs, "truth", fixed_cfg)
        fixed_ates.append(held_out_ate(net_fixed))
    return curriculum_ates, fixed_ates
