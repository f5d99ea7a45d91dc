"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest -s tests/test_acceptance.py -v` to see the per-criterion
lines as they complete. The desk-scale fixture (criteria 5-7 share it) trains
both networks once per session.
"""

import functools
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from odofuse.baselines import gyro_integrate
from odofuse.ekf import EkfConfig, OracleMeasurements, run_filter
from odofuse.metrics import ate, d_rte, rmse, sigma_coverage, t_rte
from odofuse.motion import Trajectory
from odofuse.neural import tensor as T
from odofuse.orientation_net import (
    OrientationNet,
    nll_from_params_taped,
    quat_residual_taped,
)
from odofuse.pipeline import bench_pipeline, infer_trajectory
from odofuse.position_net import PositionNet, chain_windows, world_frame_inputs
from odofuse.quat import (
    UnitQuaternion,
    angular_distance_arr,
    boxminus_arr,
    boxplus_arr,
    normalize_arr,
    quat_exp,
    quat_log,
)
from odofuse.simkit import SensorModel, gen_trajectory, synthesize_imu

from oracles import (
    ate_definition,
    d_rte_definition,
    finite_diff_components,
    rmse_definition,
    t_rte_definition,
)

SRC = str(Path(__file__).resolve().parent.parent / "src")


def criterion(number, title):
    """Print one PASS/FAIL line per acceptance criterion."""

    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.time()
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\nFAIL criterion {number}: {title} ({time.time() - start:.1f}s)")
                raise
            print(f"\nPASS criterion {number}: {title} ({time.time() - start:.1f}s)")

        return wrapper

    return decorate


# ---------------------------------------------------------------------------
# criterion 1: manifold property suite
# ---------------------------------------------------------------------------


@criterion(1, "manifold suite: 1e5 randomized roundtrips within 1e-9, < 10 s")
def test_manifold_suite():
    start = time.time()
    rng = np.random.default_rng(0)
    n = 100_000
    quats = normalize_arr(rng.standard_normal((n, 4)))
    deltas = rng.standard_normal((n, 3))
    scales = rng.uniform(0.0, math.pi * 0.999, n) / np.linalg.norm(deltas, axis=1)
    deltas *= scales[:, None]

    # boxminus(boxplus(q, d), q) == d
    recovered = boxminus_arr(boxplus_arr(quats, deltas), quats)
    assert np.max(np.linalg.norm(recovered - deltas, axis=1)) < 1e-9

    # log(exp(d)) == d and exp output norms
    sub = slice(0, 20_000)
    for d in deltas[sub][::40]:
        q = quat_exp(d)
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12
        assert np.linalg.norm(quat_log(q) - d) < 1e-9

    # norm invariance up to 10*pi
    big = deltas[:5000] * 10.0
    from odofuse.quat import quat_exp_arr

    assert np.max(np.abs(np.linalg.norm(quat_exp_arr(big), axis=1) - 1.0)) < 1e-12

    # double cover: q and -q act identically
    u = rng.standard_normal((5000, 3))
    from odofuse.quat import rotate_vectors_arr

    q5 = quats[:5000]
    assert np.max(np.abs(rotate_vectors_arr(q5, u) - rotate_vectors_arr(-q5, u))) < 1e-12
    assert np.max(angular_distance_arr(q5, -q5)) < 1e-9

    elapsed = time.time() - start
    assert elapsed < 10.0, f"manifold suite took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# criterion 2: gradient checks over 20 seeds
# ---------------------------------------------------------------------------


@criterion(2, "gradient checks: NLL and position losses vs finite differences, 20 seeds, < 60 s")
def test_gradient_checks():
    start = time.time()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)

        # orientation loss through a hidden-8 net over a 10-step window
        onet = OrientationNet(hidden=8, head_hidden=8, seed=seed, dtype=np.float64)
        x = rng.standard_normal((10, 9)) * 0.5
        truth = normalize_arr(rng.standard_normal((10, 4)))

        def orient_loss():
            q_raw, p6, _ = onet.forward_window_taped([x[t : t + 1] for t in range(len(x))])
            return nll_from_params_taped(quat_residual_taped(q_raw, truth), p6)

        worst = max(worst, _check_grads(orient_loss, onet.parameters(), rng))

        # position loss through a hidden-8 net over an 8-step window
        pnet = PositionNet(hidden=8, seed=seed, dtype=np.float64)
        x3 = rng.standard_normal((2, 8, 6))
        rel = rng.standard_normal((16, 2))

        def pos_loss():
            diff = pnet.forward_windows_taped(x3) - rel
            return T.tsum(diff * diff) / (7.0 * 2.0)

        worst = max(worst, _check_grads(pos_loss, pnet.parameters(), rng))

    elapsed = time.time() - start
    assert worst < 1e-4, f"worst relative gradient error {worst:.2e}"
    assert elapsed < 60.0, f"gradient checks took {elapsed:.1f}s"


def _check_grads(loss_fn, params, rng, picks_per_param=3):
    loss = loss_fn()
    loss.backward()
    picks = []
    for pi, p in enumerate(params):
        take = min(picks_per_param, p.data.size)
        for fi in rng.choice(p.data.size, size=take, replace=False):
            picks.append((pi, int(fi)))
    analytic = np.array([params[pi].grad.reshape(-1)[fi] for pi, fi in picks])
    for p in params:
        p.grad = None
    numeric = finite_diff_components(lambda: loss_fn().item(), params, picks, h=1e-5)
    denom = np.maximum(np.abs(numeric), 1e-6)  # absolute floor per the criterion
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# criterion 3: EKF closed-loop fusion
# ---------------------------------------------------------------------------


@criterion(3, "EKF fusion: fused RMSE <= 0.03 rad, gyro drift >= 0.3 rad, outlier CDF shrinks")
def test_ekf_closed_loop():
    rng = np.random.default_rng(42)
    traj = gen_trajectory(seed=7, duration=60.0)
    bias = np.full(3, 0.01 / math.sqrt(3.0))  # |bias| = 0.01 rad/s
    sensor = SensorModel(gyro_noise=0.005, gyro_bias=bias)
    imu = synthesize_imu(traj, sensor, seed=11)

    sigma = 0.05
    meas_q = boxplus_arr(traj.quat, rng.normal(0.0, sigma, (len(traj), 3)))
    meas_c = np.tile(sigma**2 * np.eye(3), (len(traj), 1, 1))
    cfg = EkfConfig(process_noise=2e-6 * np.eye(3), dt=traj.dt)
    result = run_filter(imu, OracleMeasurements(meas_q, meas_c), cfg, update_every=10,
                        q0=UnitQuaternion(*traj.quat[0]))

    fused_err = angular_distance_arr(result.trajectory.quat, traj.quat)
    fused_rmse = rmse(fused_err)
    assert fused_rmse <= 0.03, f"fused orientation RMSE {fused_rmse:.4f} rad"

    gyro_err = angular_distance_arr(gyro_integrate(imu, UnitQuaternion(*traj.quat[0])).quat, traj.quat)
    assert gyro_err[-1] >= 0.3, f"gyro-only drift at 60 s is {gyro_err[-1]:.3f} rad"

    # outlier suppression: fused error CDF sits left of the raw measurements'
    meas_err = angular_distance_arr(meas_q, traj.quat)
    fused_p95 = float(np.percentile(fused_err, 95))
    meas_p95 = float(np.percentile(meas_err, 95))
    assert fused_p95 < meas_p95, f"fused P95 {fused_p95:.4f} !< measurement P95 {meas_p95:.4f}"


# ---------------------------------------------------------------------------
# criterion 4: metric oracle equivalence
# ---------------------------------------------------------------------------


@criterion(4, "metric oracle equivalence on 100 random pairs within 1e-12, < 10 s")
def test_metric_oracles():
    start = time.time()
    rng = np.random.default_rng(3)
    for case in range(100):
        n = int(rng.integers(40, 140))
        dt = float(rng.uniform(0.05, 0.5))
        t = np.arange(n) * dt
        truth_pos = np.cumsum(rng.standard_normal((n, 2)) * rng.uniform(0.02, 0.3), axis=0)
        est_pos = truth_pos + rng.standard_normal((n, 2)) * rng.uniform(0.05, 1.0)
        truth = Trajectory(t, truth_pos)
        est = Trajectory(t, est_pos)

        errs = [rng.standard_normal(int(rng.integers(1, 4))) for _ in range(10)]
        assert rmse(np.array([np.pad(e, (0, 3 - len(e))) for e in errs])) == pytest.approx(
            rmse_definition([np.pad(e, (0, 3 - len(e))) for e in errs]), abs=1e-12
        )
        assert ate(est, truth) == pytest.approx(ate_definition(list(est_pos), list(truth_pos)), abs=1e-12)

        interval = float(rng.uniform(2.0, 10.0))
        span = int(round(interval / dt))
        expect_t = t_rte_definition(list(est_pos), list(truth_pos), span)
        got_t = t_rte(est, truth, interval=interval)
        if expect_t is None:
            assert got_t is None
        else:
            assert got_t == pytest.approx(expect_t, abs=1e-12)

        dist = float(rng.uniform(0.5, 2.0))
        expect_d = d_rte_definition(list(est_pos), list(truth_pos), dist)
        got_d = d_rte(est, truth, distance=dist)
        if expect_d is None:
            assert got_d is None
        else:
            assert got_d == pytest.approx(expect_d, abs=1e-12)
    elapsed = time.time() - start
    assert elapsed < 10.0, f"oracle equivalence took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# criteria 5-7 share the desk-scale training fixture (see conftest.py)
# ---------------------------------------------------------------------------


@criterion(5, "covariance calibration: MC agreement within 0.03; trained 1-sigma coverage in [0.5, 0.8]")
def test_covariance_calibration(desk):
    rng = np.random.default_rng(99)
    covs = np.concatenate([c for _, c in desk.test_estimates])[::5]
    chol = np.linalg.cholesky(covs)
    draws = np.einsum("nij,nj->ni", chol, rng.standard_normal((len(covs), 3)))
    got = sigma_coverage(draws, covs)

    # Monte Carlo expectation: independent draws from the same covariances
    mc = np.random.default_rng(12345)
    reps = 20
    expect = np.zeros(3)
    for _ in range(reps):
        sample = np.einsum("nij,nj->ni", chol, mc.standard_normal((len(covs), 3)))
        expect += np.asarray(sigma_coverage(sample, covs))
    expect /= reps
    for g, e in zip(got, expect):
        assert abs(g - e) <= 0.03, f"coverage {got} vs Monte Carlo {tuple(expect)}"

    # trained network: within-1-sigma fraction of its own errors
    errors = np.concatenate([boxminus_arr(truth.quat, q) for (q, _), (_, truth) in
                             zip(desk.test_estimates, desk.test_pairs)])
    net_covs = np.concatenate([c for _, c in desk.test_estimates])
    cover = sigma_coverage(errors, net_covs)
    assert 0.5 <= cover[0] <= 0.8, f"within-1-sigma coverage {cover[0]:.3f} outside [0.5, 0.8]"


@criterion(6, "desk-scale end-to-end: orientation < 0.2 rad and beats the complementary filter; "
               "ATE >= 10x better than dead reckoning and better than PDR; < 30 min")
def test_desk_scale_end_to_end(desk):
    assert desk.train_seconds < 30 * 60, f"desk pipeline took {desk.train_seconds:.0f}s"

    fused = np.array(desk.fused_rmse)
    madgwick = np.array(desk.madgwick_rmse)
    assert fused.mean() < 0.2, f"fused orientation RMSE {fused.mean():.3f} rad"
    assert fused.mean() < madgwick.mean(), (
        f"fused {fused.mean():.3f} rad !< complementary filter {madgwick.mean():.3f} rad"
    )

    ours = np.array(desk.ours_ate)
    dr = np.array(desk.dead_reckon_ate)
    step = np.array(desk.pdr_ate)
    assert ours.mean() * 10.0 <= dr.mean(), f"ATE {ours.mean():.2f} not 10x better than DR {dr.mean():.2f}"
    assert ours.mean() < step.mean(), f"ATE {ours.mean():.2f} !< PDR {step.mean():.2f}"

    # training made real progress on its own objective as well
    first, last = desk.orient_history[0]["loss"], desk.orient_history[-1]["loss"]
    assert (first - last) >= 0.5 * abs(first), "orientation NLL did not decrease by half"

    # a stationary device stays put: total drift < 0.1 m over 10 s
    static = gen_trajectory(seed=4321, duration=10.0, profile="static")
    static_imu = synthesize_imu(
        static, SensorModel(gyro_noise=0.005, accel_noise=0.05, mag_noise=0.5), seed=4321
    )
    inputs = world_frame_inputs(static_imu, static.quat).astype(np.float32)
    drift = chain_windows(desk.pos_net, inputs, window=200)
    assert np.linalg.norm(drift[-1]) < 0.1, f"stationary drift {np.linalg.norm(drift[-1]):.3f} m"

    # the trained position net is anti-causal within a window (BiLSTM):
    # perturbing the last sample moves the first estimated step
    walk_imu, walk_truth = desk.test_pairs[0]
    win = world_frame_inputs(walk_imu, walk_truth.quat).astype(np.float32)[:200]
    base = desk.pos_net.forward_window(win)
    bumped = win.copy()
    bumped[-1] += 1.0
    assert not np.allclose(desk.pos_net.forward_window(bumped)[1], base[1])


@criterion(7, "curriculum effect: 100->2000 schedule beats fixed-100 held-out ATE (median of 3 seeds)")
def test_curriculum_effect(curriculum_runs):
    curriculum_ates, fixed_ates = curriculum_runs
    med_cur = float(np.median(curriculum_ates))
    med_fixed = float(np.median(fixed_ates))
    assert med_cur <= med_fixed, (
        f"curriculum median ATE {med_cur:.3f} m !<= fixed-100 median {med_fixed:.3f} m "
        f"(curriculum {curriculum_ates}, fixed {fixed_ates})"
    )


# ---------------------------------------------------------------------------
# criterion 8: throughput
# ---------------------------------------------------------------------------


@criterion(8, "throughput: full pipeline <= 65 ms per 100 samples (architecture-scale networks)")
def test_throughput():
    orient = OrientationNet(hidden=100, head_hidden=50, seed=0)
    pos = PositionNet(hidden=100, seed=0)
    result = bench_pipeline(orient, pos, samples=2000, seed=0)
    assert result.ms_per_100 <= 65.0, f"{result.ms_per_100:.1f} ms per 100 samples"


# ---------------------------------------------------------------------------
# criterion 9: byte-identical determinism of seeded commands
# ---------------------------------------------------------------------------


def _run_cli(args, cwd):
    import os

    env = dict(os.environ, PYTHONPATH=SRC)
    proc = subprocess.run([sys.executable, "-m", "odofuse", *args],
                          cwd=cwd, env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


def _tree_bytes(root):
    return {p.name: p.read_bytes() for p in sorted(Path(root).glob("*")) if p.is_file()}


@criterion(9, "determinism: seeded simulate/train-* commands reproduce byte-identical outputs")
def test_seeded_commands_byte_identical(tmp_path):
    sim_cfg = tmp_path / "sim.toml"
    sim_cfg.write_text("duration = 8.0\ncount = 2\n")
    for run in ("a", "b"):
        _run_cli(["simulate", "--out", f"data_{run}", "--seed", "33", "--config", str(sim_cfg),
                  "--calibration-run"], cwd=tmp_path)
    assert _tree_bytes(tmp_path / "data_a") == _tree_bytes(tmp_path / "data_b")

    orient_cfg = tmp_path / "orient.toml"
    orient_cfg.write_text("hidden = 8\nhead_hidden = 8\nwindow = 40\nepochs = 1\nbatch = 4\n")
    pos_cfg = tmp_path / "pos.toml"
    pos_cfg.write_text("hidden = 8\nstages = [40]\nepochs_per_stage = 1\nbatch = 4\n")
    for run in ("a", "b"):
        _run_cli(["train-orient", "--data", "data_a", "--out", f"orient_{run}.ifw",
                  "--config", str(orient_cfg), "--loss-log", f"orient_{run}.csv"], cwd=tmp_path)
        _run_cli(["train-pos", "--data", "data_a", "--out", f"pos_{run}.ifw",
                  "--orient-weights", f"orient_{run}.ifw", "--orient-source", "ekf",
                  "--config", str(pos_cfg), "--loss-log", f"pos_{run}.csv"], cwd=tmp_path)
    for stem in ("orient", "pos"):
        a = (tmp_path / f"{stem}_a.ifw").read_bytes()
        b = (tmp_path / f"{stem}_b.ifw").read_bytes()
        assert a == b, f"{stem} weights differ between identical seeded runs"
        assert (tmp_path / f"{stem}_a.csv").read_bytes() == (tmp_path / f"{stem}_b.csv").read_bytes()
