"""Learned absolute-orientation estimator with a covariance head.

Per 100 Hz step the network consumes a 9-vector (scaled accelerometer, raw
gyroscope, scaled magnetometer), runs a 2-layer LSTM, and emits a quaternion
(4 raw values, normalized) plus 6 covariance parameters: log standard
deviations for the diagonal and tanh-bounded correlation coefficients for the
off-diagonals. Training minimizes the manifold negative log likelihood
0.5 * d^T Sigma^-1 d + 0.5 * ln|Sigma| with d the boxminus residual between
the true and estimated orientations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .motion import ImuSequence
from .neural import Adam, DenseLayer, LstmLayer, TrainingError, assign_state, clip_global_norm
from .neural import tensor as T
from .neural.layers import detach_state, lstm_forward
from .neural.serialize import load_weights, save_weights
from .quat import UnitQuaternion, boxminus, normalize_arr

log = logging.getLogger(__name__)

ACCEL_SCALE = 9.80665  # inputs divided by standard gravity
MAG_SCALE = 50.0  # microtesla; brings calibrated fields near the unit sphere
CORRELATION_BOUND = 0.99


@dataclass
class OrientationEstimate:
    """Absolute orientation plus a 3x3 tangent-space error covariance (rad^2)."""

    quat: UnitQuaternion
    cov: np.ndarray

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float).reshape(3, 3)
        self.cov = 0.5 * (self.cov + self.cov.T)


# ---------------------------------------------------------------------------
# covariance parameterization
# ---------------------------------------------------------------------------


def correlations_from_params(p3: np.ndarray) -> tuple:
    """Map three unconstrained values to correlations (rho01, rho02, rho12).

    rho01 and rho02 are tanh-squashed and scaled to +/-0.99. Squashing all
    three coefficients independently does NOT keep the correlation matrix
    positive definite (an odd number of strongly negative coefficients drives
    det(C) below zero, and gradient steps can tunnel through the det(C)=0
    likelihood wall into an unbounded-below region). The third value therefore
    parameterizes the bounded *partial* correlation: rho12 is generated inside
    the exact interval that keeps C positive definite given rho01 and rho02,
    which makes det(C) >= (1-0.99^2)^2 * (1-0.99^2) > 0 for every input.
    """
    r0 = CORRELATION_BOUND * np.tanh(p3[..., 0])
    r1 = CORRELATION_BOUND * np.tanh(p3[..., 1])
    half_width = np.sqrt((1.0 - r0 * r0) * (1.0 - r1 * r1))
    r2 = r0 * r1 + half_width * CORRELATION_BOUND * np.tanh(p3[..., 2])
    return r0, r1, r2


def ensure_spd(matrices: np.ndarray) -> np.ndarray:
    """Repair any non-PD matrix with escalating diagonal jitter (1e-9, x10...).

    Unreachable from ``cov_from_params`` (its construction is PD for every
    parameter vector) but kept as a guard for matrices arriving from files or
    external callers. Repairs are logged.
    """
    mats = np.asarray(matrices, dtype=float).reshape(-1, 3, 3).copy()
    lam_min = np.linalg.eigvalsh(mats)[:, 0]
    bad = np.nonzero(lam_min <= 0.0)[0]
    if len(bad):
        log.warning("covariance repair: jitter applied to %d of %d matrices", len(bad), len(mats))
        eye = np.eye(3)
        jitter = 1e-9 * np.maximum(1.0, np.einsum("nii->n", mats[bad]) / 3.0)
        remaining = bad
        for _ in range(60):
            cand = mats[remaining] + jitter[:, None, None] * eye
            ok = np.linalg.eigvalsh(cand)[:, 0] > 0.0
            mats[remaining[ok]] = cand[ok]
            remaining = remaining[~ok]
            jitter = jitter[~ok] * 10.0
            if not len(remaining):
                break
        else:  # pragma: no cover - jitter ladder always terminates
            raise RuntimeError("jitter repair failed to reach positive definiteness")
    return mats


def cov_from_params_batch(params: np.ndarray) -> np.ndarray:
    """(N, 6) parameter rows -> (N, 3, 3) SPD covariance matrices.

    First three entries are log standard deviations (exponentiated and squared
    for the diagonal); the rest generate bounded correlation coefficients, see
    ``correlations_from_params``. The result is SPD by construction;
    ``ensure_spd`` backstops numerically marginal cases.
    """
    p = np.asarray(params, dtype=float).reshape(-1, 6)
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite covariance parameters")
    sigma = np.exp(p[:, :3])
    r0, r1, r2 = correlations_from_params(p[:, 3:])
    corr = np.empty((len(p), 3, 3))
    corr[:, 0, 0] = corr[:, 1, 1] = corr[:, 2, 2] = 1.0
    corr[:, 0, 1] = corr[:, 1, 0] = r0
    corr[:, 0, 2] = corr[:, 2, 0] = r1
    corr[:, 1, 2] = corr[:, 2, 1] = r2
    cov = corr * (sigma[:, :, None] * sigma[:, None, :])
    det_corr = 1.0 + 2.0 * r0 * r1 * r2 - r0 * r0 - r1 * r1 - r2 * r2
    if np.any(det_corr <= 1e-12):  # pragma: no cover - PD by construction
        return ensure_spd(cov)
    return cov


def cov_from_params(params) -> np.ndarray:
    """Single 6-vector -> 3x3 SPD covariance."""
    return cov_from_params_batch(np.asarray(params, dtype=float).reshape(1, 6))[0]


def nll_loss(q_true: UnitQuaternion, est: OrientationEstimate) -> float:
    """Gaussian negative log likelihood of the true orientation under the estimate."""
    r = boxminus(q_true, est.quat)
    sign, logdet = np.linalg.slogdet(est.cov)
    if sign <= 0:
        raise ValueError("covariance is not positive definite")
    return float(0.5 * r @ np.linalg.solve(est.cov, r) + 0.5 * logdet)


# ---------------------------------------------------------------------------
# taped loss path (training)
# ---------------------------------------------------------------------------

_CONJ = np.array([1.0, -1.0, -1.0, -1.0])


def _hamilton_rows(a, b):
    """Row-wise Hamilton product of (N, 4) operands (tensors or arrays)."""
    aw, ax, ay, az = a[:, 0:1], a[:, 1:2], a[:, 2:3], a[:, 3:4]
    bw, bx, by, bz = b[:, 0:1], b[:, 1:2], b[:, 2:3], b[:, 3:4]
    return T.concat(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=1,
    )


def quat_residual_taped(q_raw, q_true: np.ndarray):
    """Differentiable boxminus(q_true, normalize(q_raw)) for (N, 4) rows.

    The constant truth rows are sign-aligned to the estimate so the product
    stays on the short-geodesic branch of the log map.
    """
    nsq = T.tsum(q_raw * q_raw, axis=1, keepdims=True)
    q_hat = q_raw / T.sqrt(nsq + 1e-24)
    dots = np.sum(q_true * q_hat.data, axis=1, keepdims=True)
    truth = np.where(dots < 0.0, -q_true, q_true).astype(q_raw.data.dtype)
    prod = _hamilton_rows(q_hat * _CONJ.astype(q_raw.data.dtype), truth)
    w = prod[:, 0:1]
    v = prod[:, 1:4]
    ssq = T.tsum(v * v, axis=1, keepdims=True)
    s = T.sqrt(ssq + 1e-36)
    small = s.data < 1e-6
    s_safe = T.where(small, np.ones_like(s.data), s)
    # w = <q_hat, truth> >= 0 after the sign alignment, so atan2 stays acute
    factor = T.where(small, (1.0 - ssq / (3.0 * w * w)) / w, T.atan2(s, w) / s_safe)
    return 2.0 * factor * v


def nll_from_params_taped(residual, p6):
    """Mean NLL over (N, 3) residual rows with (N, 6) covariance parameters.

    Mirrors ``cov_from_params`` (PD for every parameter value, so the loss is a
    proper likelihood everywhere) through the closed-form correlation inverse
    and determinant.
    """
    log_sigma = p6[:, 0:3]
    y = residual * T.exp(-log_sigma)
    r0 = CORRELATION_BOUND * T.tanh(p6[:, 3:4])
    r1 = CORRELATION_BOUND * T.tanh(p6[:, 4:5])
    half_width = T.sqrt((1.0 - r0 * r0) * (1.0 - r1 * r1))
    r2 = r0 * r1 + half_width * (CORRELATION_BOUND * T.tanh(p6[:, 5:6]))
    y0, y1, y2 = y[:, 0:1], y[:, 1:2], y[:, 2:3]
    det_c = T.maximum(1.0 + 2.0 * r0 * r1 * r2 - r0 * r0 - r1 * r1 - r2 * r2, 1e-12)
    quad = (
        y0 * y0 * (1.0 - r2 * r2)
        + y1 * y1 * (1.0 - r1 * r1)
        + y2 * y2 * (1.0 - r0 * r0)
        + 2.0 * y0 * y1 * (r1 * r2 - r0)
        + 2.0 * y0 * y2 * (r0 * r2 - r1)
        + 2.0 * y1 * y2 * (r0 * r1 - r2)
    ) / det_c
    logdet = 2.0 * T.tsum(log_sigma, axis=1, keepdims=True) + T.log(det_c)
    return T.tmean(0.5 * quad + 0.5 * logdet)


# ---------------------------------------------------------------------------
# the network
# ---------------------------------------------------------------------------


class OrientationNet:
    """2-layer LSTM with a quaternion head and a covariance head."""

    INPUT_SIZE = 9

    def __init__(self, hidden: int = 100, head_hidden: int = 50, seed: int = 0, dtype=np.float32):
        self.hidden = int(hidden)
        self.head_hidden = int(head_hidden)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rngs = np.random.default_rng(seed).spawn(6)
        self.lstm1 = LstmLayer(self.INPUT_SIZE, hidden, rngs[0], dtype)
        self.lstm2 = LstmLayer(hidden, hidden, rngs[1], dtype)
        self.quat_fc1 = DenseLayer(hidden, head_hidden, "tanh", rngs[2], dtype)
        self.quat_fc2 = DenseLayer(head_hidden, 4, None, rngs[3], dtype)
        self.quat_fc2.b.data[0] = 1.0  # start at the identity quaternion
        self.cov_fc1 = DenseLayer(hidden, head_hidden, "tanh", rngs[4], dtype)
        self.cov_fc2 = DenseLayer(head_hidden, 6, None, rngs[5], dtype)

    # -- parameter plumbing -------------------------------------------------

    def named_parameters(self):
        names = ["lstm1", "lstm2", "quat_fc1", "quat_fc2", "cov_fc1", "cov_fc2"]
        out = {}
        for name in names:
            layer = getattr(self, name)
            out[f"{name}.W"] = layer.W
            out[f"{name}.b"] = layer.b
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def arch(self) -> dict:
        return {"kind": "orientation_estimator", "hidden": self.hidden, "head_hidden": self.head_hidden}

    def save(self, path):
        save_weights(path, self.named_parameters(), self.arch())

    @classmethod
    def load(cls, path) -> "OrientationNet":
        arch, tensors = load_weights(path)
        if arch.get("kind") != "orientation_estimator":
            raise ValueError(f"{path}: not orientation-estimator weights ({arch.get('kind')!r})")
        net = cls(hidden=arch["hidden"], head_hidden=arch["head_hidden"])
        assign_state(net.named_parameters(), tensors, str(path))
        return net

    # -- forward ------------------------------------------------------------

    def prepare_inputs(self, imu: ImuSequence) -> np.ndarray:
        """Scale device-frame channels into the network input layout."""
        x = np.column_stack([imu.accel / ACCEL_SCALE, imu.gyro, imu.mag / MAG_SCALE])
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite IMU input")
        return x.astype(self.dtype)

    def forward_window(self, x: np.ndarray, state=None):
        """Inference over a (T, 9) input window.

        Returns per-step unit quaternions (T, 4), covariance parameters (T, 6),
        and the carried hidden state.
        """
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input window")
        xs = [x[t : t + 1] for t in range(len(x))]
        outs, state = lstm_forward([self.lstm1, self.lstm2], xs, state, taped=False)
        h_cat = np.concatenate(outs, axis=0)
        q_raw = self.quat_fc2.forward_raw(self.quat_fc1.forward_raw(h_cat))
        p6 = self.cov_fc2.forward_raw(self.cov_fc1.forward_raw(h_cat))
        return normalize_arr(q_raw.astype(np.float64)), p6.astype(np.float64), state

    def forward_window_taped(self, xs, state=None):
        """Training forward over per-step (B, 9) inputs.

        Returns raw quaternion rows and covariance parameters as tensors with
        step-major rows (step 0 lanes first), plus the new hidden state.
        """
        outs, state = lstm_forward([self.lstm1, self.lstm2], xs, state, taped=True)
        h_cat = T.concat(outs, axis=0)
        q_raw = self.quat_fc2.forward(self.quat_fc1.forward(h_cat))
        p6 = self.cov_fc2.forward(self.cov_fc1.forward(h_cat))
        return q_raw, p6, state

    def estimate_window(self, imu: ImuSequence, state=None):
        """Per-step OrientationEstimates for an IMU window (hidden state carried)."""
        quats, p6, state = self.forward_window(self.prepare_inputs(imu), state)
        covs = cov_from_params_batch(p6)
        ests = [OrientationEstimate(UnitQuaternion(*q), c) for q, c in zip(quats, covs)]
        return ests, state

    def orientation_estimates(self, imu: ImuSequence):
        """Whole-trajectory per-step estimates as arrays: (N, 4) and (N, 3, 3).

        Hidden state persists across the trajectory and is reset per call.
        """
        quats, p6, _ = self.forward_window(self.prepare_inputs(imu))
        return quats, cov_from_params_batch(p6)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class OrientTrainConfig:
    hidden: int = 100
    head_hidden: int = 50
    window: int = 200  # samples per truncated-BPTT window (2 s at 100 Hz)
    lr: float = 5e-4
    batch: int = 64  # parallel trajectory lanes
    epochs: int = 20
    # epochs trained with the covariance frozen at identity before the full
    # NLL takes over; a heteroscedastic loss from scratch lets the covariance
    # head explain the residuals away faster than the mean can fit them
    warmup_epochs: int = 8
    seed: int = 0
    grad_clip: float = 5.0


def train_orientnet(dataset, config: OrientTrainConfig | None = None):
    """Train on (ImuSequence, Trajectory) pairs with ground-truth orientations.

    Trajectories become parallel batch lanes; the LSTM state is carried,
    detached, across consecutive windows within each lane and reset per epoch.
    Returns (net, log); the log holds one {'epoch', 'loss'} entry per epoch,
    plus an 'aborted' marker if divergence forced a checkpoint restore.
    """
    cfg = config or OrientTrainConfig()
    pairs = [(imu, truth) for imu, truth in dataset]
    if not pairs:
        raise ValueError("empty dataset")
    for _, truth in pairs:
        if truth is None or truth.quat is None:
            raise ValueError("training requires ground-truth orientations")

    net = OrientationNet(cfg.hidden, cfg.head_hidden, seed=cfg.seed)
    params = net.parameters()
    opt = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)

    inputs = [net.prepare_inputs(imu) for imu, _ in pairs]
    truths = [truth.quat.astype(np.float64) for _, truth in pairs]

    order = rng.permutation(len(pairs))
    groups = [order[i : i + cfg.batch] for i in range(0, len(pairs), cfg.batch)]

    history = []
    checkpoint = [p.data.copy() for p in params]
    for epoch in range(cfg.epochs):
        warmup = epoch < cfg.warmup_epochs
        losses = []
        try:
            for group in groups:
                n_win = min(len(inputs[i]) for i in group) // cfg.window
                if n_win == 0:
                    continue
                span = n_win * cfg.window
                x3 = np.stack([inputs[i][:span] for i in group])  # (B, span, 9)
                q3 = np.stack([truths[i][:span] for i in group])  # (B, span, 4)
                state = None
                for w in range(n_win):
                    lo = w * cfg.window
                    xs = [x3[:, lo + t] for t in range(cfg.window)]
                    q_raw, p6, state = net.forward_window_taped(xs, state)
                    truth_flat = q3[:, lo : lo + cfg.window].transpose(1, 0, 2).reshape(-1, 4)
                    resid = quat_residual_taped(q_raw, truth_flat)
                    if warmup:
                        # the NLL with the covariance pinned to identity
                        loss = 0.5 * T.tmean(T.tsum(resid * resid, axis=1, keepdims=True))
                    else:
                        loss = nll_from_params_taped(resid, p6)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise TrainingError("non-finite loss")
                    loss.backward()
                    clip_global_norm(params, cfg.grad_clip)
                    opt.step()
                    state = detach_state(state)
                    losses.append(value)
        except TrainingError as err:
            for p, saved in zip(params, checkpoint):
                p.data = saved
            history.append({"epoch": epoch, "loss": float("nan"), "aborted": str(err)})
            log.warning("orientation training aborted at epoch %d: %s", epoch, err)
            break
        checkpoint = [p.data.copy() for p in params]
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        history.append({"epoch": epoch, "loss": mean_loss, "phase": "warmup" if warmup else "nll"})
        log.info("orientation epoch %d (%s): loss %.4f", epoch, "warmup" if warmup else "nll", mean_loss)
    return net, history
