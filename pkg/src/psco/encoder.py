"""MLP encoder stack with manual reverse-mode gradients and a momentum copy.

The online network is ``h(g(f(x)))`` (backbone, projector, predictor). The
momentum copy covers ``f`` and ``g`` only: keys never pass through ``h``.
Weights are stored as ``(in, out)`` so a layer computes ``x @ W + b``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NormalizeError, ShapeError, TapeError

STAGES = ("f", "g", "h")
MOMENTUM_STAGES = ("f", "g")


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(pre, out):
    return (pre > 0).astype(pre.dtype)


def _tanh_grad(pre, out):
    return 1.0 - out * out


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "linear": (lambda x: x, lambda pre, out: np.ones_like(pre)),
}

# squared gain of the variance-preserving init for each activation
GAIN2 = {"relu": 2.0, "tanh": 1.0, "linear": 1.0}


def l2_normalize(v):
    """Scale ``v`` (a vector, or each row of a matrix) to unit Euclidean norm."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NormalizeError("cannot normalize non-finite input")
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise NormalizeError("cannot normalize a zero vector")
    return v / norm


@dataclass
class EncoderState:
    theta: dict
    phi: dict
    layer_dims: dict
    activation: str = "relu"

    @property
    def input_dim(self) -> int:
        return self.layer_dims["f"][0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims["g"][-1]

    def copy(self) -> "EncoderState":
        return copy.deepcopy(self)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.theta.values())


def param_names(layer_dims, stages=STAGES):
    names = []
    for s in stages:
        for i in range(len(layer_dims[s]) - 1):
            names += [f"{s}.{i}.weight", f"{s}.{i}.bias"]
    return names


def build_encoder(layer_dims, activation="relu", seed=0) -> EncoderState:
    """He-uniform weights, zero biases; the momentum copy starts as an exact copy of theta.

    Variance-preserving init matters here: with no normalization layers, a
    1/sqrt(fan_in) bound shrinks the signal layer by layer until the outputs
    are dominated by the biases and every sample maps to the same direction.
    """
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    dims = {s: [int(v) for v in layer_dims[s]] for s in STAGES}
    if dims["g"][0] != dims["f"][-1] or dims["h"][0] != dims["g"][-1] or dims["h"][-1] != dims["g"][-1]:
        raise ShapeError(f"stage dimensions do not chain: {dims}")
    if any(len(dims[s]) < 2 for s in STAGES):
        raise ShapeError("every stage needs at least one layer")
    rng = np.random.default_rng(seed)
    theta = {}
    for s in STAGES:
        for i, (fan_in, fan_out) in enumerate(zip(dims[s][:-1], dims[s][1:])):
            bound = np.sqrt(GAIN2[activation] * 3.0 / fan_in)
            theta[f"{s}.{i}.weight"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            theta[f"{s}.{i}.bias"] = np.zeros(fan_out)
    phi = {k: v.copy() for k, v in theta.items() if k.split(".")[0] in MOMENTUM_STAGES}
    return EncoderState(theta, phi, dims, activation)


def init_encoder(input_dim, backbone_hidden=(64, 64), proj_hidden=64, d=32, pred_hidden=64,
                 activation="relu", seed=0) -> EncoderState:
    """Desk-scale stack: MLP backbone, 2-layer projector and predictor."""
    f = [input_dim, *backbone_hidden]
    return build_encoder(
        {"f": f, "g": [f[-1], proj_hidden, d], "h": [d, pred_hidden, d]},
        activation=activation,
        seed=seed,
    )


def identity_encoder(dim: int) -> EncoderState:
    """One linear identity layer per stage, so every encoder reduces to l2_normalize."""
    theta = {}
    for s in STAGES:
        theta[f"{s}.0.weight"] = np.eye(dim)
        theta[f"{s}.0.bias"] = np.zeros(dim)
    phi = {k: v.copy() for k, v in theta.items() if k.split(".")[0] in MOMENTUM_STAGES}
    return EncoderState(theta, phi, {s: [dim, dim] for s in STAGES}, "linear")


class GradientTape:
    """Forward intermediates of one query pass, consumed by :func:`backward`."""

    def __init__(self):
        self.reset()

    def reset(self):
        self.records = []
        self.output = None
        self.normalized = None
        self.state = None

    def __len__(self):
        return len(self.records)


def _run(params, layer_dims, activation, stages, x, tape=None):
    act, _ = ACTIVATIONS[activation]
    for s in stages:
        n_layers = len(layer_dims[s]) - 1
        for i in range(n_layers):
            W = params[f"{s}.{i}.weight"]
            pre = x @ W + params[f"{s}.{i}.bias"]
            # backbone features are post-activation; projector/predictor outputs are linear
            activated = i < n_layers - 1 or s == "f"
            out = act(pre) if activated else pre
            if tape is not None:
                tape.records.append((s, i, W, x, pre, out, activated))
            x = out
    return x


def _check_input(x, state):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != state.input_dim or x.ndim not in (1, 2):
        raise ShapeError(f"expected input of dimension {state.input_dim}, got shape {x.shape}")
    return x


def encode_query(x, state: EncoderState, tape: GradientTape | None = None):
    """Normalize(h(g(f(x)))) with online parameters; records the pass on ``tape``."""
    x = _check_input(x, state)
    if tape is not None:
        tape.reset()
    y = _run(state.theta, state.layer_dims, state.activation, STAGES, x, tape)
    q = l2_normalize(y)
    if tape is not None:
        tape.output, tape.normalized, tape.state = y, q, state
    return q


def encode_key(x, state: EncoderState):
    """Normalize(g(f(x))) with momentum parameters. Never recorded."""
    x = _check_input(x, state)
    return l2_normalize(_run(state.phi, state.layer_dims, state.activation, MOMENTUM_STAGES, x))


def encode_online_key(x, state: EncoderState):
    """Normalize(g(f(x))) with online parameters (meta-test support path)."""
    x = _check_input(x, state)
    return l2_normalize(_run(state.theta, state.layer_dims, state.activation, MOMENTUM_STAGES, x))


def ema_update(state: EncoderState, m: float) -> EncoderState:
    """phi <- m * phi + (1 - m) * theta, in place."""
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"EMA momentum must lie in [0, 1], got {m}")
    for k, p in state.phi.items():
        p *= m
        p += (1.0 - m) * state.theta[k]
    return state


def backward(tape: GradientTape, loss_grad, wrt: str = "normalized"):
    """Gradients of the loss w.r.t. every theta entry on the recorded query path.

    ``loss_grad`` is d(loss)/d(normalized output), or d(loss)/d(raw predictor
    output) when ``wrt="raw"``.
    """
    if tape is None or not tape.records:
        raise TapeError("backward called on an empty tape")
    state = tape.state
    _, act_grad = ACTIVATIONS[state.activation]
    q, y = tape.normalized, tape.output
    dq = np.asarray(loss_grad, dtype=np.float64)
    if dq.shape != q.shape:
        raise ShapeError(f"loss gradient shape {dq.shape} does not match output {q.shape}")
    if wrt == "raw":
        dy = dq
    elif wrt == "normalized":
        norm = np.linalg.norm(y, axis=-1, keepdims=True)
        dy = (dq - q * np.sum(q * dq, axis=-1, keepdims=True)) / norm
    else:
        raise ConfigError(f"unknown gradient seed kind {wrt!r}")

    grads = {}
    g = dy
    for s, i, W, x, pre, out, activated in reversed(tape.records):
        if activated:
            g = g * act_grad(pre, out)
        if x.ndim == 1:
            grads[f"{s}.{i}.weight"] = np.outer(x, g)
            grads[f"{s}.{i}.bias"] = g.copy()
        else:
            grads[f"{s}.{i}.weight"] = x.T @ g
            grads[f"{s}.{i}.bias"] = g.sum(axis=0)
        g = g @ W.T
    return grads
