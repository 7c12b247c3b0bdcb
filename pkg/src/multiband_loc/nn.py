"""Small dense-network engine: forward, exact backprop, inverted dropout, Adam.

Everything is float64 and batch-first: inputs are (batch, features) arrays,
and 1-D inputs are treated as a batch of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from multiband_loc import binio

CKPT_MAGIC = b"MBLOCCK"
CKPT_VERSION = 1

ACTIVATIONS = ("relu", "leaky_relu", "identity")


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    """A forward cache was used after the model's parameters changed."""


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"
    slope: float = 0.01

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"weights {self.weights.shape} vs bias {self.bias.shape}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def activate(self, a: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return np.maximum(a, 0.0)
        if self.activation == "leaky_relu":
            return np.where(a > 0, a, self.slope * a)
        return a

    def activation_grad(self, a: np.ndarray) -> np.ndarray | float:
        if self.activation == "relu":
            return (a > 0).astype(float)
        if self.activation == "leaky_relu":
            return np.where(a > 0, 1.0, self.slope)
        return 1.0


@dataclass
class MlpModel:
    layers: list[DenseLayer]
    dropout_rate: float = 0.0
    # indices of layers whose activated output receives dropout in train mode
    dropout_layers: tuple[int, ...] = ()
    mode: str = "infer"
    version: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation, l.slope) for l in self.layers],
            self.dropout_rate,
            self.dropout_layers,
            self.mode,
        )


def build_mlp(
    sizes: Sequence[int],
    hidden_activation: str,
    rng: np.random.Generator,
    *,
    output_activation: str = "identity",
    slope: float = 0.01,
    dropout_rate: float = 0.0,
) -> MlpModel:
    """Fully connected net; He-uniform for rectifier layers, Glorot for linear ones."""
    layers = []
    n = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        act = output_activation if i == n - 1 else hidden_activation
        if act == "identity":
            limit = math.sqrt(6.0 / (fan_in + fan_out))
        else:
            limit = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, (fan_out, fan_in))
        layers.append(DenseLayer(w, np.zeros(fan_out), act, slope))
    return MlpModel(layers, dropout_rate, tuple(range(n - 1)) if dropout_rate > 0 else ())


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    masks: list[np.ndarray | None]
    version: int
    squeeze: bool


@dataclass
class ParameterGradients:
    grads: list[np.ndarray]  # aligned with MlpModel.parameters()
    input: np.ndarray


def forward(
    model: MlpModel, x: np.ndarray, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != model.in_dim:
        raise ShapeError(f"input width {h.shape[1]} != model input {model.in_dim}")
    train = model.mode == "train" and model.dropout_rate > 0
    if train and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    inputs, pre, masks = [], [], []
    keep = 1.0 - model.dropout_rate
    for i, layer in enumerate(model.layers):
        inputs.append(h)
        a = h @ layer.weights.T + layer.bias
        pre.append(a)
        h = layer.activate(a)
        mask = None
        if train and i in model.dropout_layers:
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        masks.append(mask)
    cache = ForwardCache(inputs, pre, masks, model.version, squeeze)
    return (h[0] if squeeze else h), cache


def backward(model: MlpModel, cache: ForwardCache, output_gradient: np.ndarray) -> ParameterGradients:
    """Gradients of a scalar loss given dLoss/dOutput for the cached forward pass."""
    if cache.version != model.version or len(cache.pre) != len(model.layers):
        raise StaleCacheError("forward cache does not match the current model parameters")
    g = np.asarray(output_gradient, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    grads: list[np.ndarray] = [None] * (2 * len(model.layers))  # type: ignore[list-item]
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        g = g * layer.activation_grad(cache.pre[i])
        grads[2 * i] = g.T @ cache.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layer.weights
    return ParameterGradients(grads, g[0] if cache.squeeze else g)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"param {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient; aborting training")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


def mark_updated(*models: MlpModel) -> None:
    for m in models:
        m.version += 1


# -- checkpoints ---------------------------------------------------------------


def mlp_spec(model: MlpModel) -> dict:
    return {
        "layers": [
            {"in": l.in_dim, "out": l.out_dim, "activation": l.activation, "slope": l.slope}
            for l in model.layers
        ],
        "dropout_rate": model.dropout_rate,
        "dropout_layers": list(model.dropout_layers),
    }


def mlp_arrays(model: MlpModel, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for i, l in enumerate(model.layers):
        out[f"{prefix}.{i}.W"] = l.weights
        out[f"{prefix}.{i}.b"] = l.bias
    return out


def mlp_from(spec: dict, arrays: dict[str, np.ndarray], prefix: str) -> MlpModel:
    layers = [
        DenseLayer(arrays[f"{prefix}.{i}.W"], arrays[f"{prefix}.{i}.b"], d["activation"], d["slope"])
        for i, d in enumerate(spec["layers"])
    ]
    return MlpModel(layers, spec["dropout_rate"], tuple(spec["dropout_layers"]))


def save_checkpoint(
    path: str | Path,
    kind: str,
    nets: dict[str, MlpModel],
    meta: dict | None = None,
    extra: dict[str, np.ndarray] | None = None,
) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, net in nets.items():
        arrays.update(mlp_arrays(net, name))
    for name, arr in (extra or {}).items():
        arrays[f"extra.{name}"] = np.asarray(arr)
    header = {"kind": kind, "nets": {n: mlp_spec(m) for n, m in nets.items()}, "meta": meta or {}}
    binio.dump(path, CKPT_MAGIC, CKPT_VERSION, header, arrays)


def load_checkpoint(path: str | Path) -> tuple[str, dict[str, MlpModel], dict, dict[str, np.ndarray]]:
    header, arrays = binio.load(path, CKPT_MAGIC, CKPT_VERSION)
    nets = {n: mlp_from(s, arrays, n) for n, s in header["nets"].items()}
    extra = {k[len("extra."):]: v for k, v in arrays.items() if k.startswith("extra.")}
    return header["kind"], nets, header["meta"], extra
