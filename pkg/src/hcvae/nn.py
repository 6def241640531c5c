"""Dense layers with hand-written backward passes, Adam, and a gradient checker.

Matrices are plain 2-D numpy arrays (rows = batch). Nothing here keeps a
graph: each backward takes the forward input (and optionally the forward
output) explicitly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError


class Activation(str, enum.Enum):
    RELU = "relu"
    LINEAR = "linear"


@dataclass
class DenseLayer:
    """Fully connected layer ``act(x @ W.T + b)`` with ``W`` shaped (out, in)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.LINEAR

    def __post_init__(self):
        self.activation = Activation(self.activation)
        if self.weights.ndim != 2:
            raise DimensionError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} outputs"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


def init_dense(in_dim, out_dim, activation, rng, dtype=np.float32) -> DenseLayer:
    """Scaled-uniform init in +-sqrt(6 / (fan_in + fan_out)), zero bias."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-limit, limit, size=(out_dim, in_dim)).astype(dtype)
    return DenseLayer(w, np.zeros(out_dim, dtype=dtype), Activation(activation))


def _check_input(layer, x):
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise DimensionError(
            f"layer expects input of width {layer.in_dim}, got shape {x.shape}"
        )


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    _check_input(layer, x)
    out = x @ layer.weights.T
    out += layer.bias
    if layer.activation is Activation.RELU:
        np.maximum(out, 0, out=out)
    return out


def dense_backward(layer: DenseLayer, x: np.ndarray, grad_out: np.ndarray, output=None):
    """Return ``(grad_W, grad_b, grad_in)`` for a batch.

    ``output`` is the matching ``dense_forward`` result; when omitted it is
    recomputed to build the ReLU mask.
    """
    _check_input(layer, x)
    if grad_out.shape != (x.shape[0], layer.out_dim):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} != ({x.shape[0]}, {layer.out_dim})"
        )
    if layer.activation is Activation.RELU:
        if output is None:
            output = dense_forward(layer, x)
        grad_out = grad_out * (output > 0)
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0)
    grad_in = grad_out @ layer.weights
    return grad_w, grad_b, grad_in


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params: list, grads: list, state: AdamState):
    """Bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and Adam moments differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"shape mismatch in Adam step: {p.shape} vs {g.shape}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / bc2) + state.eps
        p -= (state.lr / bc1) * m / denom
    return params, state


def finite_diff_gradcheck(
    loss_fn,
    params: list,
    step: float = 1e-5,
    analytic=None,
    coords_per_tensor: int | None = 16,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` returns either a scalar loss or ``(loss, grads)``.
    If ``analytic`` is not given, the grads returned by ``loss_fn`` are used.
    Parameters are perturbed in place and restored. ``coords_per_tensor=None``
    checks every coordinate.
    """
    if analytic is None:
        out = loss_fn(params)
        if not isinstance(out, tuple):
            raise ValueError("loss_fn must return (loss, grads) when analytic is omitted")
        analytic = out[1]

    def scalar(ps):
        out = loss_fn(ps)
        # keep the native scalar: extended-precision losses must survive until
        # the difference is taken
        val = out[0] if isinstance(out, tuple) else out
        if not np.isfinite(val):
            raise NumericError(f"non-finite loss {val!r} during gradient check")
        return val

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        gflat = np.asarray(g, dtype=np.float64).reshape(-1)
        if coords_per_tensor is None or coords_per_tensor >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=coords_per_tensor, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = scalar(params)
            flat[i] = orig - step
            down = scalar(params)
            flat[i] = orig
            numeric = float((up - down) / (2.0 * step))
            a = gflat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
