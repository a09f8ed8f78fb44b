"""Minimal dense-network engine: forward pass, backprop, Adam and a regression loop.

Everything runs in float64. A network is an ordered list of :class:`Layer`
objects; the last layer may use a softmax activation, hidden layers use relu
or identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import NonFiniteGradientError, ShapeError, UsageError

ACTIVATIONS = ("relu", "identity", "softmax")
CHECKPOINT_FORMAT = "mlp-v1"


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "relu"

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class DenseNetwork:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        for k, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise UsageError(f"unknown activation {layer.activation!r}")
            if layer.activation == "softmax" and k != len(self.layers) - 1:
                raise UsageError("softmax is only allowed on the final layer")
            if layer.biases.shape != (layer.n_out,):
                raise ShapeError(f"layer {k}: bias shape {layer.biases.shape} != ({layer.n_out},)")
            if k and self.layers[k - 1].n_out != layer.n_in:
                raise ShapeError(
                    f"layer {k} expects {layer.n_in} inputs, previous layer gives {self.layers[k - 1].n_out}"
                )

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def activations(self) -> list[str]:
        return [layer.activation for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(
            [Layer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers]
        )

    @classmethod
    def init(cls, dims: Sequence[int], activations: Sequence[str], seed=None) -> "DenseNetwork":
        """Glorot-uniform weights, zero biases."""
        if len(activations) != len(dims) - 1:
            raise ShapeError("need one activation per layer")
        rng = np.random.default_rng(seed)
        layers = []
        for n_in, n_out, act in zip(dims[:-1], dims[1:], activations):
            limit = np.sqrt(6.0 / (n_in + n_out))
            layers.append(Layer(rng.uniform(-limit, limit, (n_out, n_in)), np.zeros(n_out), act))
        return cls(layers)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "softmax":
        return softmax(z)
    return z


def _forward_cached(net: DenseNetwork, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.layers[0].n_in:
        raise ShapeError(f"input has {x.shape[-1]} features, network expects {net.layers[0].n_in}")
    acts = [x]
    pre = []
    for layer in net.layers:
        z = acts[-1] @ layer.weights.T + layer.biases
        pre.append(z)
        acts.append(_activate(z, layer.activation))
    return acts, pre


def forward(net: DenseNetwork, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of row vectors."""
    return _forward_cached(net, x)[0][-1]


def backward(net: DenseNetwork, x, loss_grad, through_output_activation: bool = True):
    """Gradients of a scalar loss with respect to every parameter.

    ``loss_grad`` is dL/d(output). For batched ``x`` the gradients are summed
    over rows. With ``through_output_activation=False`` the gradient is taken
    to be with respect to the final pre-activation (e.g. softmax logits).

    Returns a list shaped like :meth:`DenseNetwork.parameters`.
    """
    acts, pre = _forward_cached(net, x)
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.shape != acts[-1].shape:
        raise ShapeError(f"loss_grad shape {g.shape} != output shape {acts[-1].shape}")

    grads: list[np.ndarray] = [None] * (2 * len(net.layers))
    delta = g
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if k < len(net.layers) - 1 or through_output_activation:
            if layer.activation == "relu":
                delta = delta * (pre[k] > 0)
            elif layer.activation == "softmax":
                s = acts[k + 1]
                delta = s * (delta - np.sum(delta * s, axis=-1, keepdims=True))
        a_in = acts[k]
        if delta.ndim == 1:
            grads[2 * k] = np.outer(delta, a_in)
            grads[2 * k + 1] = delta.copy()
        else:
            grads[2 * k] = delta.T @ a_in
            grads[2 * k + 1] = delta.sum(axis=0)
        delta = delta @ layer.weights
    return grads


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Raises NonFiniteGradientError and leaves params and state untouched if any
    gradient entry is NaN/inf.
    """
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or state.m[i].shape != p.shape:
            raise ShapeError(f"parameter {i}: shape {p.shape}, gradient {g.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradientError(f"parameter {i}: {bad} non-finite gradient entries")

    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def mse(net: DenseNetwork, x, y) -> float:
    d = forward(net, x) - y
    return float(np.mean(d * d))


def train_regression(
    net: DenseNetwork,
    inputs,
    targets,
    epochs: int,
    batch_size: int = 32,
    seed=0,
    lr: float = 1e-3,
    lr_decay: float = 1.0,
):
    """Mini-batch MSE training with Adam.

    ``lr_decay`` multiplies the learning rate after every epoch. Returns the
    network (trained in place) and the per-epoch training MSE, evaluated on
    the full training set after each epoch.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise UsageError("training set is empty")
    if len(y) != len(x):
        raise ShapeError(f"{len(x)} inputs but {len(y)} targets")
    if y.shape[1] != net.layers[-1].n_out:
        raise ShapeError(f"targets have {y.shape[1]} columns, network outputs {net.layers[-1].n_out}")

    rng = np.random.default_rng(seed)
    params = net.parameters()
    state = AdamState.for_params(params, lr=lr)
    history = []
    n = len(x)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            out = forward(net, x[idx])
            g = 2.0 * (out - y[idx]) / out.size
            adam_step(params, backward(net, x[idx], g), state)
        state.lr *= lr_decay
        history.append(mse(net, x, y))
    return net, history


def network_to_dict(net: DenseNetwork) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "dims": net.dims,
        "activations": net.activations,
        "weights": [layer.weights.tolist() for layer in net.layers],
        "biases": [layer.biases.tolist() for layer in net.layers],
    }


def network_from_dict(doc: dict) -> DenseNetwork:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise UsageError(f"unsupported checkpoint format {doc.get('format')!r}")
    layers = [
        Layer(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64), act)
        for w, b, act in zip(doc["weights"], doc["biases"], doc["activations"])
    ]
    net = DenseNetwork(layers)
    if net.dims != list(doc["dims"]):
        raise ShapeError(f"checkpoint dims {doc['dims']} disagree with stored arrays {net.dims}")
    return net


def save_checkpoint(net: DenseNetwork, path, **extra) -> None:
    doc = network_to_dict(net)
    doc.update(extra)
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[DenseNetwork, dict]:
    doc = json.loads(Path(path).read_text())
    return network_from_dict(doc), doc
