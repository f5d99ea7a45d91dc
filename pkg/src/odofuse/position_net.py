"""Learned planar displacement estimator over world-frame IMU windows.

Per step the network sees 6 world-frame channels (gravity-removed acceleration
and angular rate, both rotated by an orientation source), runs a 2-layer
bidirectional LSTM, and emits a 2D displacement increment through
dense(2h->50, tanh) -> dense(50->20, tanh) -> linear(20->2). Increments are
cumulatively summed inside a window; windows chain by carrying the final
position as the next window's offset, with recurrent state reset at every
window boundary. Training uses windowed MSE over start-relative displacements
and a curriculum that grows the window length.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .motion import ImuSequence, Trajectory
from .neural import Adam, DenseLayer, LstmLayer, TrainingError, assign_state, clip_global_norm
from .neural import tensor as T
from .neural.layers import bilstm_forward
from .neural.serialize import load_weights, save_weights
from .quat import rotation_matrices

log = logging.getLogger(__name__)

GRAVITY_MAGNITUDE = 9.80665


def world_frame_inputs(imu: ImuSequence, quats: np.ndarray) -> np.ndarray:
    """Rotate device-frame accel/gyro into the world frame and remove gravity.

    ``quats`` are world-from-device rows aligned with the samples. Output is
    (N, 6): world acceleration (specific force minus (0, 0, g)) then world
    angular rate.
    """
    if len(quats) != len(imu):
        raise ValueError("need one orientation per IMU sample")
    rot = rotation_matrices(quats)
    a_world = np.einsum("nij,nj->ni", rot, imu.accel)
    a_world[:, 2] -= GRAVITY_MAGNITUDE
    w_world = np.einsum("nij,nj->ni", rot, imu.gyro)
    return np.column_stack([a_world, w_world])


class PositionNet:
    """2-layer BiLSTM with a three-stage dense head emitting 2D increments."""

    INPUT_SIZE = 6

    def __init__(self, hidden: int = 100, seed: int = 0, dtype=np.float32):
        self.hidden = int(hidden)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rngs = np.random.default_rng(seed).spawn(7)
        self.l1f = LstmLayer(self.INPUT_SIZE, hidden, rngs[0], dtype)
        self.l1b = LstmLayer(self.INPUT_SIZE, hidden, rngs[1], dtype)
        self.l2f = LstmLayer(2 * hidden, hidden, rngs[2], dtype)
        self.l2b = LstmLayer(2 * hidden, hidden, rngs[3], dtype)
        self.fc1 = DenseLayer(2 * hidden, 50, "tanh", rngs[4], dtype)
        self.fc2 = DenseLayer(50, 20, "tanh", rngs[5], dtype)
        self.head = DenseLayer(20, 2, None, rngs[6], dtype)

    def named_parameters(self):
        out = {}
        for name in ("l1f", "l1b", "l2f", "l2b", "fc1", "fc2", "head"):
            layer = getattr(self, name)
            out[f"{name}.W"] = layer.W
            out[f"{name}.b"] = layer.b
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def arch(self) -> dict:
        return {"kind": "position_estimator", "hidden": self.hidden}

    def save(self, path):
        save_weights(path, self.named_parameters(), self.arch())

    @classmethod
    def load(cls, path) -> "PositionNet":
        arch, tensors = load_weights(path)
        if arch.get("kind") != "position_estimator":
            raise ValueError(f"{path}: not position-estimator weights ({arch.get('kind')!r})")
        net = cls(hidden=arch["hidden"])
        assign_state(net.named_parameters(), tensors, str(path))
        return net

    def _head_raw(self, h):
        return self.head.forward_raw(self.fc2.forward_raw(self.fc1.forward_raw(h)))

    def forward_window(self, x: np.ndarray) -> np.ndarray:
        """(T, 6) window -> (T, 2) cumulative displacement relative to the
        window start (row 0 is exactly zero; the first increment carries no
        training signal and is discarded)."""
        if len(x) == 0:
            raise ValueError("empty window")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input window")
        x = x.astype(self.dtype, copy=False)
        xs = [x[t : t + 1] for t in range(len(x))]
        seq = bilstm_forward([self.l1f, self.l2f], [self.l1b, self.l2b], xs, taped=False)
        d = self._head_raw(np.concatenate(seq, axis=0)).astype(np.float64)
        d[0] = 0.0
        return np.cumsum(d, axis=0)

    def forward_steps_taped(self, xs):
        """Per-step (B, input) tensors/arrays -> step-major ((T*B), 2)
        start-relative positions on the tape."""
        batch = xs[0].shape[0]
        steps = len(xs)
        seq = bilstm_forward([self.l1f, self.l2f], [self.l1b, self.l2b], xs, taped=True)
        h = T.concat(seq, axis=0)
        d = self.head.forward(self.fc2.forward(self.fc1.forward(h)))
        mask = np.ones((steps * batch, 1), dtype=self.dtype)
        mask[:batch] = 0.0  # the window's first increment is unconstrained
        return T.blocked_cumsum(d * mask, batch)

    def forward_windows_taped(self, x3: np.ndarray):
        """(B, T, 6) batch -> step-major ((T*B), 2) start-relative positions."""
        return self.forward_steps_taped([x3[:, t] for t in range(x3.shape[1])])


def chain_windows(net: PositionNet, inputs: np.ndarray, window: int = 200) -> np.ndarray:
    """Chain fixed-length windows over a whole (N, 6) input stream.

    Each window is anchored on the previous window's final sample, so no
    inter-sample displacement is lost at boundaries; the recurrent state resets
    with every window. Returns (N, 2) positions starting at the origin.
    """
    if window < 2:
        raise ValueError("window must cover at least 2 samples")
    n = len(inputs)
    pos = np.zeros((n, 2))
    offset = np.zeros(2)
    start = 1
    while start < n:
        stop = min(start + window - 1, n)
        rel = net.forward_window(inputs[start - 1 : stop])
        pos[start:stop] = offset + rel[1:]
        offset = offset + rel[-1]
        start = stop
    return pos


def position_loss(est, truth) -> float:
    """Mean squared error of start-relative displacements over a window.

    Inputs are aligned (T, 2) position arrays (or Trajectories); the first
    sample anchors both, so a constant offset between them scores zero.
    """
    e = est.pos[:, :2] if isinstance(est, Trajectory) else np.asarray(est, dtype=float)[:, :2]
    t = truth.pos[:, :2] if isinstance(truth, Trajectory) else np.asarray(truth, dtype=float)[:, :2]
    if e.shape != t.shape:
        raise ValueError(f"window shapes differ: {e.shape} vs {t.shape}")
    if len(e) < 2:
        raise ValueError("need at least 2 samples (1 displacement step)")
    diff = (t[1:] - t[0]) - (e[1:] - e[0])
    return float(np.mean(np.sum(diff**2, axis=1)))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class PosTrainConfig:
    hidden: int = 100
    lr: float = 1e-3
    batch: int = 64
    stages: tuple = (100, 200, 500, 1000, 2000)  # curriculum window lengths
    epochs_per_stage: int = 4
    seed: int = 0
    grad_clip: float = 5.0
    infer_window: int = 200
    # long stages see few full-coverage batches; resample windows so every
    # epoch provides at least this many optimizer steps
    min_batches: int = 12
    # optional joint phase: position loss also flows into the orientation net
    joint_finetune: bool = False
    finetune_epochs: int = 1
    finetune_lr: float = 1e-4


def _window_batch_loss(net: PositionNet, x3: np.ndarray, pos_rel: np.ndarray):
    """Taped MSE over start-relative displacements for a (B, T, ...) batch."""
    batch, steps, _ = x3.shape
    est = net.forward_windows_taped(x3)
    diff = est - pos_rel
    return T.tsum(diff * diff) / float((steps - 1) * batch)


def train_posnet(dataset, orient_source="truth", config: PosTrainConfig | None = None):
    """Curriculum training over (ImuSequence, Trajectory) pairs.

    ``orient_source`` selects the frame used to rotate inputs into the world:
    "truth" uses ground-truth orientations; otherwise pass a list of (N, 4)
    quaternion arrays (e.g. fused filter output) aligned with the dataset.
    Returns (net, log) where the log has one entry per (stage, epoch).
    """
    cfg = config or PosTrainConfig()
    pairs = list(dataset)
    if not pairs:
        raise ValueError("empty dataset")
    if isinstance(orient_source, str):
        if orient_source != "truth":
            raise ValueError(f"unknown orientation source {orient_source!r}")
        quat_rows = []
        for _, truth in pairs:
            if truth is None or truth.quat is None:
                raise ValueError("orientation source 'truth' requires ground-truth quaternions")
            quat_rows.append(truth.quat)
    else:
        quat_rows = list(orient_source)
        if len(quat_rows) != len(pairs):
            raise ValueError("need one quaternion array per trajectory")

    inputs = [world_frame_inputs(imu, q).astype(np.float32) for (imu, _), q in zip(pairs, quat_rows)]
    targets = [truth.pos[:, :2].astype(np.float64) for _, truth in pairs]

    net = PositionNet(hidden=cfg.hidden, seed=cfg.seed)
    params = net.parameters()
    opt = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    total = sum(len(x) for x in inputs)

    history = []
    checkpoint = [p.data.copy() for p in params]
    for stage in cfg.stages:
        eligible = [i for i, x in enumerate(inputs) if len(x) >= stage]
        if not eligible:
            log.warning("curriculum stage %d skipped: no trajectory long enough", stage)
            continue
        batches = max(cfg.min_batches, total // (stage * cfg.batch))
        for epoch in range(cfg.epochs_per_stage):
            losses = []
            try:
                for _ in range(batches):
                    picks = rng.integers(0, len(eligible), cfg.batch)
                    x3 = np.empty((cfg.batch, stage, 6), dtype=np.float32)
                    rel = np.empty((cfg.batch, stage, 2))
                    for row, pick in enumerate(picks):
                        ti = eligible[pick]
                        start = int(rng.integers(0, len(inputs[ti]) - stage + 1))
                        x3[row] = inputs[ti][start : start + stage]
                        window = targets[ti][start : start + stage]
                        rel[row] = window - window[0]
                    pos_rel = rel.transpose(1, 0, 2).reshape(-1, 2).astype(np.float32)
                    loss = _window_batch_loss(net, x3, pos_rel)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise TrainingError("non-finite loss")
                    loss.backward()
                    clip_global_norm(params, cfg.grad_clip)
                    opt.step()
                    losses.append(value)
            except TrainingError as err:
                for p, saved in zip(params, checkpoint):
                    p.data = saved
                history.append({"stage": stage, "epoch": epoch, "loss": float("nan"), "aborted": str(err)})
                log.warning("position training aborted at stage %d epoch %d: %s", stage, epoch, err)
                return net, history
            checkpoint = [p.data.copy() for p in params]
            mean_loss = float(np.mean(losses))
            history.append({"stage": stage, "epoch": epoch, "loss": mean_loss})
            log.info("position stage %d epoch %d: mse %.5f", stage, epoch, mean_loss)
    return net, history


# ---------------------------------------------------------------------------
# joint fine-tuning (position loss through the orientation network)
# ---------------------------------------------------------------------------


def _rotate_rows_taped(q_unit, vectors: np.ndarray):
    """Rotate constant (N, 3) rows by unit-quaternion tensor rows (N, 4)."""
    from .orientation_net import _CONJ, _hamilton_rows

    zeros = np.zeros((len(vectors), 1), dtype=vectors.dtype)
    u4 = np.concatenate([zeros, vectors], axis=1)
    sandwich = _hamilton_rows(_hamilton_rows(q_unit, u4), q_unit * _CONJ.astype(vectors.dtype))
    return sandwich[:, 1:4]


def finetune_joint(orient_net, pos_net, dataset, config: PosTrainConfig):
    """Fine-tune both networks with the windowed position MSE.

    The gradient path is: orientation net -> normalized quaternions ->
    differentiable rotation of the raw channels -> position net. The fusion
    filter stays out of the gradient path (it is a recursive estimator, not a
    taped computation); this phase adjusts the two networks jointly around
    their detached pre-training. Returns a per-epoch loss log.
    """
    cfg = config
    window = cfg.infer_window
    pairs = list(dataset)
    params = orient_net.parameters() + pos_net.parameters()
    opt = Adam(params, lr=cfg.finetune_lr)
    rng = np.random.default_rng(cfg.seed + 1)

    x9 = [orient_net.prepare_inputs(imu) for imu, _ in pairs]
    accel = [imu.accel.astype(np.float32) for imu, _ in pairs]
    gyro = [imu.gyro.astype(np.float32) for imu, _ in pairs]
    targets = [truth.pos[:, :2] for _, truth in pairs]
    gvec = np.array([0.0, 0.0, GRAVITY_MAGNITUDE], dtype=np.float32)

    eligible = [i for i, x in enumerate(x9) if len(x) >= window]
    if not eligible:
        raise ValueError(f"no trajectory is at least {window} samples long")
    total = sum(len(x) for x in x9)
    batch = min(cfg.batch, 16)  # the joint tape is deep; keep batches modest
    batches = max(1, total // (window * batch * 4))

    history = []
    for epoch in range(cfg.finetune_epochs):
        losses = []
        for _ in range(batches):
            picks = rng.integers(0, len(eligible), batch)
            xo = np.empty((batch, window, 9), dtype=np.float32)
            xa = np.empty((batch, window, 3), dtype=np.float32)
            xg = np.empty((batch, window, 3), dtype=np.float32)
            rel = np.empty((batch, window, 2))
            for row, pick in enumerate(picks):
                ti = eligible[pick]
                start = int(rng.integers(0, len(x9[ti]) - window + 1))
                sl = slice(start, start + window)
                xo[row], xa[row], xg[row] = x9[ti][sl], accel[ti][sl], gyro[ti][sl]
                chunk = targets[ti][sl]
                rel[row] = chunk - chunk[0]
            q_raw, _, _ = orient_net.forward_window_taped([xo[:, t] for t in range(window)])
            nsq = T.tsum(q_raw * q_raw, axis=1, keepdims=True)
            q_unit = q_raw / T.sqrt(nsq + 1e-24)
            a_flat = xa.transpose(1, 0, 2).reshape(-1, 3)
            g_flat = xg.transpose(1, 0, 2).reshape(-1, 3)
            a_world = _rotate_rows_taped(q_unit, a_flat) - gvec
            w_world = _rotate_rows_taped(q_unit, g_flat)
            x6 = T.concat([a_world, w_world], axis=1)
            xs = [x6[t * batch : (t + 1) * batch] for t in range(window)]
            est = pos_net.forward_steps_taped(xs)
            pos_rel = rel.transpose(1, 0, 2).reshape(-1, 2).astype(np.float32)
            diff = est - pos_rel
            loss = T.tsum(diff * diff) / float((window - 1) * batch)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError("non-finite joint fine-tune loss")
            loss.backward()
            clip_global_norm(params, cfg.grad_clip)
            opt.step()
            losses.append(value)
        mean_loss = float(np.mean(losses))
        history.append({"epoch": epoch, "loss": mean_loss})
        log.info("joint fine-tune epoch %d: mse %.5f", epoch, mean_loss)
    return history
