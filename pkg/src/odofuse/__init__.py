"""Two-stage inertial odometry: a learned orientation estimator fused with
gyroscope propagation in a quaternion-manifold EKF, feeding a learned planar
position module; with classical baselines, synthetic IMU generation, and a
trajectory-metric suite."""

__version__ = "0.1.0"

from .ekf import EkfConfig, EkfState, measurement_update, propagate, run_filter
from .metrics import MetricReport, ate, d_rte, evaluate_trajectories, rmse, sigma_coverage, t_rte
from .motion import ImuSample, ImuSequence, Trajectory
from .orientation_net import (
    OrientationEstimate,
    OrientationNet,
    OrientTrainConfig,
    cov_from_params,
    nll_loss,
    train_orientnet,
)
from .pipeline import bench_pipeline, fused_orientation, infer_trajectory
from .position_net import (
    PositionNet,
    PosTrainConfig,
    chain_windows,
    position_loss,
    train_posnet,
    world_frame_inputs,
)
from .quat import UnitQuaternion, angular_distance, boxminus, boxplus, quat_exp, quat_log, quat_mul, rotate_vector
from .simkit import (
    MagCalibration,
    MagneticMap,
    SensorModel,
    WalkProfile,
    apply_mag_calibration,
    fit_mag_ellipsoid,
    gen_trajectory,
    load_dataset,
    synthesize_imu,
)
