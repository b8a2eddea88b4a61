"""Dense feed-forward networks, reverse-mode gradients, MSE loss and Adam.

Weights are stored ``(out, in)`` and layers compute ``x @ W.T + b`` on
row-batched inputs. GELU (exact erf form) is applied on hidden layers; the
output layer is linear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when an array does not have the shape an operation expects."""


def gelu(x):
    """Exact GELU, ``0.5 * x * (1 + erf(x / sqrt(2)))``. Accepts scalars or arrays."""
    if np.isscalar(x):
        return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))
    return kernels.gelu(np.asarray(x, dtype=np.float64))


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need at least two layer sizes, all >= 1; got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    @classmethod
    def mlp(cls, n_in, hidden, n_hidden, n_out):
        return cls((n_in,) + (hidden,) * n_hidden + (n_out,))


@dataclass
class ForwardCache:
    inputs: list
    gelu_grads: list
    was_vector: bool


class MLP:
    """Fully connected network with GELU hidden activations and a linear output."""

    def __init__(self, spec: NetworkSpec, layers: list[DenseLayer]):
        if len(layers) != len(spec.layer_sizes) - 1:
            raise ShapeError(f"{len(layers)} layers given for spec {spec.layer_sizes}")
        for i, layer in enumerate(layers):
            want = (spec.layer_sizes[i + 1], spec.layer_sizes[i])
            if layer.weights.shape != want:
                raise ShapeError(f"layer {i}: weights {layer.weights.shape}, expected {want}")
        self.spec = spec
        self.layers = layers

    @classmethod
    def init(cls, spec: NetworkSpec, rng: np.random.Generator) -> "MLP":
        """Glorot-uniform weights, zero biases."""
        layers = []
        for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
            limit = math.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-limit, limit, size=(n_out, n_in))
            layers.append(DenseLayer(w, np.zeros(n_out)))
        return cls(spec, layers)

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "MLP":
        layers = [DenseLayer(np.zeros((o, i)), np.zeros(o))
                  for i, o in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])]
        return cls(spec, layers)

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def copy(self) -> "MLP":
        return MLP(self.spec, [DenseLayer(l.weights.copy(), l.bias.copy()) for l in self.layers])

    def forward(self, x):
        """Return ``(output, cache)``. ``x`` is ``(n_in,)`` or ``(batch, n_in)``."""
        x = np.asarray(x, dtype=np.float64)
        was_vector = x.ndim == 1
        if was_vector:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.n_in:
            raise ShapeError(
                f"input shape {x.shape if not was_vector else x.shape[1:]} does not match "
                f"network input size {self.spec.n_in} (spec {self.spec.layer_sizes})"
            )
        inputs, grads = [], []
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            inputs.append(h)
            z = h @ layer.weights.T + layer.bias
            if i < last:
                h, dz = kernels.gelu_with_grad(z)
                grads.append(dz)
            else:
                h = z
        out = h[0] if was_vector else h
        return out, ForwardCache(inputs, grads, was_vector)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache | None, grad_output):
        """Return ``(param_grads, grad_input)``.

        ``param_grads`` is a list of ``(dW, db)`` pairs aligned with ``layers``;
        batch rows are summed in index order.
        """
        if cache is None:
            raise ValueError("backward called without a forward cache")
        g = np.asarray(grad_output, dtype=np.float64)
        if cache.was_vector:
            g = g[None, :]
        batch = cache.inputs[0].shape[0]
        if g.shape != (batch, self.spec.n_out):
            raise ShapeError(f"grad_output shape {g.shape}, expected {(batch, self.spec.n_out)}")
        param_grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            if i < len(self.layers) - 1:
                g = g * cache.gelu_grads[i]
            param_grads[i] = (g.T @ cache.inputs[i], g.sum(axis=0))
            g = g @ self.layers[i].weights
        grad_in = g[0] if cache.was_vector else g
        return param_grads, grad_in


def flatten_grads(param_grads):
    out = []
    for dw, db in param_grads:
        out.extend((dw, db))
    return out


def mse_loss(pred, target):
    """Mean squared error over all entries, and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError(
            f"{len(params)} params, {len(grads)} grads, {len(state.first_moment)} moment slots"
        )
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step_count
    corr2 = 1.0 - b2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ShapeError(f"param shape {p.shape} != grad shape {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps_stab)
