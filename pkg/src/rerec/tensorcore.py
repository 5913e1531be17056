"""Dense perceptron with hand-written backprop, Adam, and gradient checking.

Weights are stored ``(fan_in, fan_out)`` so a batch ``x`` of shape
``(n, fan_in)`` maps through ``x @ W + b``. Hidden layers use tanh or relu,
the output layer is linear. Everything is float64.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DivergenceError, ShapeError

ACTIVATIONS = ("tanh", "relu")


@dataclass
class DenseNet:
    layer_dims: list
    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.layer_dims) < 2:
            raise ShapeError("a net needs at least input and output dims")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("one weight matrix and bias vector per layer transition")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_dims[j], self.layer_dims[j + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise ShapeError(f"layer {j}: weight {w.shape} / bias {b.shape}, expected {expect}")

    @classmethod
    def init(cls, layer_dims, rng, activation="tanh"):
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_dims), weights, biases, activation)

    @property
    def relu(self):
        return self.activation == "relu"

    def params(self):
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_params(self):
        return sum(p.size for p in self.params())

    def copy(self):
        return DenseNet(list(self.layer_dims), [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.activation)

    def to_arrays(self, prefix=""):
        arrays = {}
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"{prefix}W{j}"] = w
            arrays[f"{prefix}b{j}"] = b
        return arrays

    @classmethod
    def from_arrays(cls, layer_dims, arrays, activation, prefix=""):
        n = len(layer_dims) - 1
        return cls(list(layer_dims), [arrays[f"{prefix}W{j}"] for j in range(n)],
                   [arrays[f"{prefix}b{j}"] for j in range(n)], activation)


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise ShapeError(f"input has shape {np.shape(x)}, net expects width {net.layer_dims[0]}")
    return x, single


def forward(net, x):
    """Output for a vector (or a batch of row vectors)."""
    xb, single = _as_batch(net, x)
    out = kernels.mlp_forward(net.weights, net.biases, xb, net.relu)[-1]
    return out[0] if single else out


def forward_trace(net, x):
    """All layer outputs for a batch, as consumed by :func:`backward_from_trace`."""
    xb, _ = _as_batch(net, x)
    return kernels.mlp_forward(net.weights, net.biases, xb, net.relu)


def backward_from_trace(net, acts, upstream):
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim == 1:
        upstream = upstream[None, :]
    if upstream.shape != acts[-1].shape:
        raise ShapeError(f"upstream grad {upstream.shape} vs output {acts[-1].shape}")
    return kernels.mlp_backward(net.weights, acts, upstream, net.relu)


def backward(net, x, upstream):
    """Gradients of ``sum(forward(net, x) * upstream)``.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` follows
    :meth:`DenseNet.params` ordering. Batched inputs sum over the batch.
    """
    xb, single = _as_batch(net, x)
    acts = kernels.mlp_forward(net.weights, net.biases, xb, net.relu)
    gws, gbs, gx = backward_from_trace(net, acts, upstream)
    grads = []
    for gw, gb in zip(gws, gbs):
        grads.extend((gw, gb))
    return grads, (gx[0] if single else gx)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, **kw):
        return cls(lr=lr, first_moment=[np.zeros_like(p) for p in params],
                   second_moment=[np.zeros_like(p) for p in params], **kw)


def adam_step(params, grads, state):
    """Bias-corrected Adam update applied to ``params`` in place.

    Raises :class:`DivergenceError` before touching anything if a gradient
    is non-finite.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("params, grads and optimizer moments must align")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"param {p.shape} vs grad {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient in adam_step")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def numeric_gradients(loss_fn, params, h=1e-4):
    """Central differences of a scalar ``loss_fn()`` w.r.t. each array in ``params``."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_fn()
            flat[j] = orig - h
            down = loss_fn()
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        n = np.asarray(n, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def gradient_check(net, x, upstream, h=1e-4):
    """Compare :func:`backward` with finite differences on ``sum(out * upstream)``.

    Checks every parameter and the input; returns the max relative error.
    """
    x = np.array(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    grads, gx = backward(net, x, upstream)

    def loss():
        return float(np.sum(forward(net, x) * upstream))

    numeric = numeric_gradients(loss, net.params() + [x], h)
    return max_relative_error(grads + [gx], numeric)
