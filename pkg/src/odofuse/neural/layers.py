"""Recurrent and dense layers on top of the tensor tape.

Layer ``step``/``forward`` methods run on the tape (Parameters participate in
autodiff); the ``*_raw`` variants run the identical arithmetic on plain
ndarrays for fast inference. Both call the same cell functions, which dispatch
on operand type.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

# Hidden state per layer is an (h, c) pair; a stack of layers is a list of pairs.
HiddenState = list


def uniform_init(rng, shape, fan_in, dtype):
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def orthogonal_init(rng, n, dtype):
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q.astype(dtype)


def lstm_cell(x, h, c, W, b, hidden):
    """One LSTM step; gate layout [input, forget, cell, output] along columns.

    Fused into two tape nodes (cell state, then hidden output) with a
    hand-written backward; the finite-difference gradient checks in the test
    suite pin the analytic gradients. The same arithmetic serves ndarray-only
    inputs for inference.
    """
    xd = x.data if isinstance(x, Tensor) else x
    hd = h.data if isinstance(h, Tensor) else h
    cd = c.data if isinstance(c, Tensor) else c
    Wd = W.data if isinstance(W, Tensor) else W
    bd = b.data if isinstance(b, Tensor) else b

    n_in = xd.shape[1]
    xh = np.concatenate([xd, hd], axis=1)
    z = xh @ Wd + bd
    gates = 1.0 / (1.0 + np.exp(-z))
    i = gates[:, :hidden]
    f = gates[:, hidden : 2 * hidden]
    o = gates[:, 3 * hidden :]
    g = np.tanh(z[:, 2 * hidden : 3 * hidden])
    c_new = f * cd + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c

    taped = any(isinstance(v, Tensor) and v.requires_grad for v in (x, h, c, W, b))
    if not taped:
        return h_new, c_new

    def accum(t, grad):
        if isinstance(t, Tensor) and t.requires_grad:
            t._accum(grad)

    def backward_c(gc):
        # gc arrives with the h-node's tanh contribution already folded in;
        # only the i/f/g gate columns carry gradient here
        dz3 = np.empty((z.shape[0], 3 * hidden), dtype=z.dtype)
        dz3[:, :hidden] = gc * g * i * (1.0 - i)
        dz3[:, hidden : 2 * hidden] = gc * cd * f * (1.0 - f)
        dz3[:, 2 * hidden :] = gc * i * (1.0 - g * g)
        accum(c, gc * f)
        if isinstance(W, Tensor) and W.requires_grad:
            dw = np.zeros_like(Wd)
            dw[:, : 3 * hidden] = xh.T @ dz3
            W._accum(dw)
        if isinstance(b, Tensor) and b.requires_grad:
            db = np.zeros_like(bd)
            db[: 3 * hidden] = dz3.sum(axis=0)
            b._accum(db)
        dxh = dz3 @ Wd[:, : 3 * hidden].T
        accum(x, dxh[:, :n_in])
        accum(h, dxh[:, n_in:])

    c_parents = tuple(t for t in (x, h, c, W, b) if isinstance(t, Tensor) and t.requires_grad)
    c_out = Tensor(c_new, requires_grad=True, parents=c_parents, backward=backward_c)

    def backward_h(gh):
        # only the output-gate columns carry gradient on this node
        dz_o = gh * tanh_c * o * (1.0 - o)
        if isinstance(W, Tensor) and W.requires_grad:
            dw = np.zeros_like(Wd)
            dw[:, 3 * hidden :] = xh.T @ dz_o
            W._accum(dw)
        if isinstance(b, Tensor) and b.requires_grad:
            db = np.zeros_like(bd)
            db[3 * hidden :] = dz_o.sum(axis=0)
            b._accum(db)
        dxh = dz_o @ Wd[:, 3 * hidden :].T
        accum(x, dxh[:, :n_in])
        accum(h, dxh[:, n_in:])
        c_out._accum(gh * o * (1.0 - tanh_c * tanh_c))

    h_parents = tuple(t for t in (x, h, W, b, c_out) if isinstance(t, Tensor) and t.requires_grad)
    h_out = Tensor(h_new, requires_grad=True, parents=h_parents, backward=backward_h)
    return h_out, c_out


class LstmLayer:
    """Single LSTM layer: combined weight (in+hidden, 4*hidden) plus bias.

    Input rows are uniform-initialized by fan-in; recurrent rows are orthogonal
    per gate block; the forget-gate bias starts at 1.
    """

    def __init__(self, input_size, hidden_size, rng=None, dtype=np.float32):
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        self.dtype = np.dtype(dtype)
        h = self.hidden_size
        if rng is None:
            rng = np.random.default_rng(0)
        w_in = uniform_init(rng, (self.input_size, 4 * h), self.input_size + h, self.dtype)
        w_rec = np.concatenate([orthogonal_init(rng, h, self.dtype) for _ in range(4)], axis=1)
        self.W = Parameter(np.concatenate([w_in, w_rec], axis=0))
        bias = np.zeros(4 * h, dtype=self.dtype)
        bias[h : 2 * h] = 1.0
        self.b = Parameter(bias)

    def step(self, x, h, c):
        """Taped step: x (B, in), h/c (B, hidden) tensors or constant arrays."""
        if x.shape[-1] != self.input_size:
            raise ValueError(f"expected input width {self.input_size}, got {x.shape[-1]}")
        return lstm_cell(x, h, c, self.W, self.b, self.hidden_size)

    def step_raw(self, x, h, c):
        """Inference step on plain ndarrays."""
        return lstm_cell(x, h, c, self.W.data, self.b.data, self.hidden_size)

    def zero_state(self, batch):
        z = np.zeros((batch, self.hidden_size), dtype=self.dtype)
        return z, z.copy()

    def parameters(self):
        return [self.W, self.b]


class DenseLayer:
    """Affine map with optional tanh activation."""

    def __init__(self, input_size, output_size, activation=None, rng=None, dtype=np.float32):
        if activation not in (None, "tanh"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.input_size = int(input_size)
        self.output_size = int(output_size)
        self.activation = activation
        self.dtype = np.dtype(dtype)
        if rng is None:
            rng = np.random.default_rng(0)
        self.W = Parameter(uniform_init(rng, (self.input_size, output_size), self.input_size, self.dtype))
        self.b = Parameter(np.zeros(output_size, dtype=self.dtype))

    def forward(self, x):
        if x.shape[-1] != self.input_size:
            raise ValueError(f"expected input width {self.input_size}, got {x.shape[-1]}")
        out = T.add(T.matmul(x, self.W), self.b)
        return T.tanh(out) if self.activation == "tanh" else out

    def forward_raw(self, x):
        out = x @ self.W.data + self.b.data
        return np.tanh(out) if self.activation == "tanh" else out

    def parameters(self):
        return [self.W, self.b]


def lstm_forward(layers, xs, state=None, taped=False):
    """Run stacked LSTM layers over a step sequence.

    ``xs`` is a list of (B, d) arrays/tensors, one per step. Returns the list
    of top-layer outputs per step and the final per-layer (h, c) state.
    """
    batch = xs[0].shape[0]
    if state is None:
        state = [layer.zero_state(batch) for layer in layers]
    state = list(state)
    outs = []
    step = [(layer.step if taped else layer.step_raw) for layer in layers]
    for x in xs:
        inp = x
        for li, layer in enumerate(layers):
            h, c = state[li]
            h, c = step[li](inp, h, c)
            state[li] = (h, c)
            inp = h
        outs.append(inp)
    return outs, state


def bilstm_forward(forward_layers, backward_layers, xs, taped=False):
    """Two-direction stacked LSTM: per step, concat of forward and reversed passes.

    ``forward_layers``/``backward_layers`` are equal-length layer stacks; layer
    k consumes the concatenated outputs of both directions of layer k-1.
    """
    if len(xs) == 0:
        raise ValueError("empty sequence")
    seq = xs
    for lf, lb in zip(forward_layers, backward_layers):
        fwd, _ = lstm_forward([lf], seq, taped=taped)
        bwd, _ = lstm_forward([lb], seq[::-1], taped=taped)
        bwd = bwd[::-1]
        seq = [T.concat([f, b], axis=1) for f, b in zip(fwd, bwd)]
    return seq


def detach_state(state):
    """Strip tape history from an (h, c)-per-layer state."""
    return [(h.data if isinstance(h, Tensor) else h, c.data if isinstance(c, Tensor) else c) for h, c in state]
