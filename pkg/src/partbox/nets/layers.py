"""MLP building block: parameter container, init, forward."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DiffTensor, as_tensor

_ACTIVATIONS = ("relu", "tanh", "softplus")


@dataclass
class MlpParams:
    """Weights and biases of a plain MLP, hidden layers activated, linear output."""

    weights: list
    biases: list
    activation: str = "relu"

    @classmethod
    def init(cls, dims, seed: int = 0, activation: str = "relu") -> "MlpParams":
        """He-style deterministic initialization for the layer chain `dims`."""
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            weights.append(DiffTensor(w))
            biases.append(DiffTensor(np.zeros(fan_out)))
        return cls(weights, biases, activation)

    @property
    def dims(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def zero_last_layer(self):
        """Zero the final layer in place (used by degenerate-output tests)."""
        self.weights[-1].value[:] = 0.0
        self.biases[-1].value[:] = 0.0


def mlp_forward(params: MlpParams, x, activate_last: bool = False) -> DiffTensor:
    """Apply the MLP to `x` with shape (..., fan_in).

    Hidden layers are activated; the output layer is linear unless
    `activate_last` is set (used for trunk/encoder stages).
    """
    h = as_tensor(x)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last or activate_last:
            if params.activation == "relu":
                h = h.relu()
            elif params.activation == "tanh":
                h = h.tanh()
            else:
                h = h.softplus()
    return h


def collect_parameters(*heads) -> list:
    """Flatten the parameters of several heads / MlpParams into one list."""
    out = []
    for h in heads:
        if h is None:
            continue
        if isinstance(h, MlpParams):
            out.extend(h.parameters())
        else:
            out.extend(h.parameters())
    return out
