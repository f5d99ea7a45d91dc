"""Command-line interface.

Subcommands: simulate, calibrate-mag, train-orient, train-pos, infer,
evaluate, plot, bench. Any failure prints a line starting with ``ERROR:`` to
stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import SimConfig, apply_config, parse_kv_file
from .ekf import EkfConfig
from .metrics import evaluate_trajectories
from .motion import Trajectory
from .orientation_net import OrientationNet, OrientTrainConfig, train_orientnet
from .pipeline import bench_pipeline, calibrated, fused_orientation, infer_trajectory
from .position_net import PositionNet, PosTrainConfig, finetune_joint, train_posnet
from .quat import UnitQuaternion
from .simkit import (
    MagCalibration,
    fit_mag_ellipsoid,
    gen_trajectory,
    load_dataset,
    load_dataset_file,
    load_trajectory_csv,
    save_dataset_csv,
    save_trajectory_csv,
    synthesize_imu,
)


def _write_loss_csv(path, history) -> None:
    keys = ["stage", "epoch", "loss"]
    lines = [",".join(keys)]
    for entry in history:
        lines.append(",".join(str(entry.get(k, "")) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_calibration(path) -> MagCalibration | None:
    if path is None:
        return None
    return MagCalibration.from_json(Path(path).read_text(encoding="utf-8"))


def _load_training_pairs(data_dir, cal_path):
    cal = _load_calibration(cal_path)
    pairs = []
    for imu, truth in load_dataset(data_dir):
        if truth is None:
            raise ValueError(f"{data_dir}: training files need ground-truth columns")
        pairs.append((calibrated(imu, cal), truth))
    return pairs


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = SimConfig()
    if args.config:
        apply_config(cfg, parse_kv_file(args.config), args.config)
    if args.duration is not None:
        cfg.duration = args.duration
    if args.count is not None:
        cfg.count = args.count
    if args.profile is not None:
        cfg.profile = args.profile
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mag_map = cfg.magnetic_map(seed=args.seed)
    written = []
    for i in range(cfg.count):
        seeds = np.random.SeedSequence([args.seed, i])
        traj_seed, sensor_seed, noise_seed = (int(s.generate_state(1)[0]) for s in seeds.spawn(3))
        traj = gen_trajectory(seed=traj_seed, duration=cfg.duration, profile=cfg.profile, rate=cfg.rate)
        sensor = cfg.sensor_for(np.random.default_rng(sensor_seed))
        imu = synthesize_imu(traj, sensor, mag_map, seed=noise_seed)
        path = out / f"traj_{i:03d}.csv"
        save_dataset_csv(path, imu, Trajectory(traj.t, traj.pos, traj.quat))
        written.append(path)
    if args.calibration_run:
        seeds = np.random.SeedSequence([args.seed, 10_000])
        traj_seed, sensor_seed, noise_seed = (int(s.generate_state(1)[0]) for s in seeds.spawn(3))
        traj = gen_trajectory(seed=traj_seed, duration=cfg.calibration_duration, profile="tumble", rate=cfg.rate)
        sensor = cfg.sensor_for(np.random.default_rng(sensor_seed))
        imu = synthesize_imu(traj, sensor, mag_map, seed=noise_seed)
        path = out / "calibration.csv"
        save_dataset_csv(path, imu, Trajectory(traj.t, traj.pos, traj.quat))
        written.append(path)
    for path in written:
        print(path)
    return 0


def cmd_calibrate_mag(args) -> int:
    imu, _ = load_dataset_file(args.input)
    cal = fit_mag_ellipsoid(imu.mag)
    Path(args.output).write_text(cal.to_json() + "\n", encoding="utf-8")
    print(f"offset: {np.array2string(cal.offset, precision=3)}")
    print(f"wrote {args.output}")
    return 0


def cmd_train_orient(args) -> int:
    cfg = OrientTrainConfig()
    if args.config:
        apply_config(cfg, parse_kv_file(args.config), args.config)
    pairs = _load_training_pairs(args.data, args.calibration)
    net, history = train_orientnet(pairs, cfg)
    net.save(args.out)
    if args.loss_log:
        _write_loss_csv(args.loss_log, history)
    final = history[-1]["loss"] if history else float("nan")
    print(f"trained {len(history)} epochs, final nll {final:.4f}")
    print(f"wrote {args.out}")
    return 0


def cmd_train_pos(args) -> int:
    cfg = PosTrainConfig()
    if args.config:
        apply_config(cfg, parse_kv_file(args.config), args.config)
    pairs = _load_training_pairs(args.data, args.calibration)
    if args.orient_source == "truth":
        source = "truth"
    else:
        orient_net = OrientationNet.load(args.orient_weights)
        source = [
            fused_orientation(orient_net, imu, update_every=args.update_every).trajectory.quat
            for imu, _ in pairs
        ]
    net, history = train_posnet(pairs, source, cfg)
    if cfg.joint_finetune:
        if args.orient_weights is None:
            raise ValueError("joint_finetune requires --orient-weights")
        orient_net = OrientationNet.load(args.orient_weights)
        finetune_joint(orient_net, net, pairs, cfg)
        tuned = Path(args.orient_weights).with_suffix(".finetuned.ifw")
        orient_net.save(tuned)
        print(f"wrote {tuned}")
    net.save(args.out)
    if args.loss_log:
        _write_loss_csv(args.loss_log, history)
    final = history[-1]["loss"] if history else float("nan")
    print(f"trained {len(history)} stage-epochs, final mse {final:.5f}")
    print(f"wrote {args.out}")
    return 0


def cmd_infer(args) -> int:
    orient_net = OrientationNet.load(args.orient_weights)
    pos_net = PositionNet.load(args.pos_weights)
    imu, truth = load_dataset_file(args.input)
    imu = calibrated(imu, _load_calibration(args.calibration))
    q0 = None
    if args.init_from_truth:
        if truth is None:
            raise ValueError("--init-from-truth needs ground-truth columns in the input")
        q0 = UnitQuaternion(*truth.quat[0])
    cfg = EkfConfig(process_noise=args.process_noise, dt=imu.dt)
    est = infer_trajectory(orient_net, pos_net, imu, cfg,
                           update_every=args.update_every, window=args.window, q0=q0)
    save_trajectory_csv(args.output, est)
    print(f"wrote {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    est = load_trajectory_csv(args.est)
    truth = load_trajectory_csv(args.truth)
    report = evaluate_trajectories(est, truth, t_rte_interval=args.t_rte_interval,
                                   d_rte_distance=args.d_rte_distance)
    print(report.table())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
        print(f"wrote {args.report}")
    if args.csv:
        header, row = report.csv_row()
        Path(args.csv).write_text(header + "\n" + row + "\n", encoding="utf-8")
        print(f"wrote {args.csv}")
    if args.figures:
        from . import plots
        from .quat import angular_distance_arr

        figdir = Path(args.figures)
        figdir.mkdir(parents=True, exist_ok=True)
        plots.trajectory_overlay(truth, {"estimate": est}, figdir / "overlay.svg")
        curves = {"position error [m]": np.linalg.norm(est.pos[:, :2] - truth.pos[:, :2], axis=1)}
        plots.error_curves(truth.t, curves, figdir / "position_error.svg", ylabel="error [m]")
        if est.quat is not None and truth.quat is not None:
            ang = {"orientation error [rad]": angular_distance_arr(est.quat, truth.quat)}
            plots.error_curves(truth.t, ang, figdir / "orientation_error.svg", ylabel="error [rad]")
        print(f"wrote figures to {figdir}")
    return 0


def cmd_plot(args) -> int:
    from . import plots

    truth = load_trajectory_csv(args.truth)
    estimates = {}
    for spec in args.est:
        name, _, path = spec.rpartition("=") if "=" in spec else ("", "", spec)
        label = name or Path(path).stem
        estimates[label] = load_trajectory_csv(path)
    plots.trajectory_overlay(truth, estimates, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_bench(args) -> int:
    orient_net = OrientationNet.load(args.orient_weights) if args.orient_weights else OrientationNet(
        hidden=args.hidden, head_hidden=50, seed=0)
    pos_net = PositionNet.load(args.pos_weights) if args.pos_weights else PositionNet(
        hidden=args.hidden, seed=0)
    result = bench_pipeline(orient_net, pos_net, samples=args.samples, seed=args.seed)
    print(f"ms_per_100_samples={result.ms_per_100:.2f}")
    print(f"({result.samples} samples in {result.elapsed_s:.3f} s, single pipeline pass)")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odofuse",
        description="Two-stage inertial odometry: learned orientation + EKF + learned position.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic dataset CSVs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=None, help="number of trajectories")
    p.add_argument("--duration", type=float, default=None, help="seconds per trajectory")
    p.add_argument("--profile", default=None, choices=["walk", "static", "tumble"])
    p.add_argument("--config", default=None, help="sim config (key = value lines)")
    p.add_argument("--calibration-run", action="store_true",
                   help="also write a tumbling calibration.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate-mag", help="fit an ellipsoid calibration from raw magnetometer data")
    p.add_argument("--input", required=True, help="dataset CSV with raw magnetometer columns")
    p.add_argument("--output", required=True, help="calibration JSON path")
    p.set_defaults(func=cmd_calibrate_mag)

    p = sub.add_parser("train-orient", help="train the orientation estimator")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="weight file (.ifw)")
    p.add_argument("--config", default=None)
    p.add_argument("--calibration", default=None, help="mag calibration JSON")
    p.add_argument("--loss-log", default=None, help="loss-curve CSV path")
    p.set_defaults(func=cmd_train_orient)

    p = sub.add_parser("train-pos", help="train the position estimator")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--orient-weights", default=None, help="orientation weights (.ifw)")
    p.add_argument("--orient-source", default="ekf", choices=["ekf", "truth"])
    p.add_argument("--update-every", type=int, default=10)
    p.add_argument("--config", default=None)
    p.add_argument("--calibration", default=None)
    p.add_argument("--loss-log", default=None)
    p.set_defaults(func=cmd_train_pos)

    p = sub.add_parser("infer", help="estimate a trajectory from an IMU file")
    p.add_argument("--input", required=True, help="dataset CSV (ground truth optional)")
    p.add_argument("--orient-weights", required=True)
    p.add_argument("--pos-weights", required=True)
    p.add_argument("--output", required=True, help="pose CSV path")
    p.add_argument("--calibration", default=None)
    p.add_argument("--update-every", type=int, default=10)
    p.add_argument("--window", type=int, default=200)
    p.add_argument("--process-noise", type=float, default=0.005, help="rad^2/step on each axis")
    p.add_argument("--init-from-truth", action="store_true",
                   help="initialize the filter from the file's ground truth")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="metric report for an estimate vs ground truth")
    p.add_argument("--est", required=True, help="pose CSV")
    p.add_argument("--truth", required=True, help="pose or dataset CSV")
    p.add_argument("--report", default=None, help="JSON report path")
    p.add_argument("--csv", default=None, help="delimited metrics path")
    p.add_argument("--figures", default=None, help="directory for rendered figures")
    p.add_argument("--t-rte-interval", type=float, default=60.0)
    p.add_argument("--d-rte-distance", type=float, default=1.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="SVG overlay of trajectories")
    p.add_argument("--truth", required=True)
    p.add_argument("--est", action="append", default=[], help="pose CSV, optionally label=path")
    p.add_argument("--out", required=True, help="output figure (.svg)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("bench", help="time full-pipeline inference")
    p.add_argument("--orient-weights", default=None)
    p.add_argument("--pos-weights", default=None)
    p.add_argument("--hidden", type=int, default=100, help="architecture size when no weights given")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - single reporting point for the CLI
        print(f"ERROR: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
