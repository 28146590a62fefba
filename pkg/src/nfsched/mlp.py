"""Minimal dense networks with hand-written reverse-mode gradients.

Parameters live in one flat float64 vector laid out layer by layer: the
(n_in x n_out) weight matrix in row-major order followed by the n_out bias.
Hidden layers use the rectifier; the output layer is either linear (value
heads) or tanh (bounded policy heads).  Everything is deterministic and free
of hidden state, so two networks with equal parameter vectors are
interchangeable.
"""

from __future__ import annotations

import struct

import numpy as np

from .validation import ensure_finite

_MAGIC = b"NFSM"
_FORMAT_VERSION = 1
_ACTIVATIONS = {"identity": 0, "tanh": 1}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATIONS.items()}


def _check_layer_sizes(layer_sizes) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"layer_sizes needs >= 2 positive entries, got {layer_sizes}")
    return sizes


def param_count(layer_sizes) -> int:
    sizes = _check_layer_sizes(layer_sizes)
    return sum((n_in + 1) * n_out for n_in, n_out in zip(sizes, sizes[1:]))


class Mlp:
    """Fully connected network over a flat parameter vector."""

    def __init__(self, layer_sizes, output_activation: str = "identity",
                 params: np.ndarray | None = None):
        self.layer_sizes = _check_layer_sizes(layer_sizes)
        if output_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.output_activation = output_activation
        n = param_count(self.layer_sizes)
        if params is None:
            params = np.zeros(n)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got shape {params.shape}")
        ensure_finite("params", params)
        self.params = params.copy()

    # -- construction -------------------------------------------------------

    @classmethod
    def initialize(cls, layer_sizes, output_activation: str,
                   rng: np.random.Generator) -> "Mlp":
        """Uniform init in +-1/sqrt(fan_in) per layer, weights and biases."""
        sizes = _check_layer_sizes(layer_sizes)
        chunks = []
        for n_in, n_out in zip(sizes, sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            chunks.append(rng.uniform(-bound, bound, size=(n_in + 1) * n_out))
        return cls(sizes, output_activation, np.concatenate(chunks))

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.output_activation, self.params)

    @property
    def param_count(self) -> int:
        return self.params.shape[0]

    def _layers(self):
        """Yield (W, b) views into the flat parameter vector."""
        offset = 0
        for n_in, n_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            w = self.params[offset:offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = self.params[offset:offset + n_out]
            offset += n_out
            yield w, b

    # -- evaluation ---------------------------------------------------------

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.layer_sizes[0]:
            raise ValueError(
                f"input must have {self.layer_sizes[0]} features, got shape {np.shape(x)}"
            )
        return arr, single

    def forward(self, x) -> np.ndarray:
        """Evaluate the network for one input vector or a batch of rows."""
        h, single = self._check_input(x)
        last = len(self.layer_sizes) - 2
        for i, (w, b) in enumerate(self._layers()):
            z = h @ w + b
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.output_activation == "tanh":
                h = np.tanh(z)
            else:
                h = z
        return h[0] if single else h

    def backward(self, x, output_gradient) -> tuple[np.ndarray, np.ndarray]:
        """Exact gradients of sum(output_gradient * output) by reverse mode.

        Returns (parameter gradient, input gradient).  For batched inputs the
        parameter gradient accumulates over rows and the input gradient keeps
        one row per sample.
        """
        h, single = self._check_input(x)
        gout = np.asarray(output_gradient, dtype=np.float64)
        if single:
            gout = gout[None, :]
        if gout.shape != (h.shape[0], self.layer_sizes[-1]):
            raise ValueError(
                f"output_gradient shape {np.shape(output_gradient)} does not match "
                f"output dim {self.layer_sizes[-1]}"
            )

        # forward pass, keeping inputs and pre-activations per layer
        layers = list(self._layers())
        last = len(layers) - 1
        inputs, pre = [], []
        for i, (w, b) in enumerate(layers):
            inputs.append(h)
            z = h @ w + b
            pre.append(z)
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.output_activation == "tanh":
                h = np.tanh(z)
            else:
                h = z

        grad = np.empty_like(self.params)
        offset = self.params.shape[0]
        if self.output_activation == "tanh":
            g = gout * (1.0 - np.tanh(pre[last]) ** 2)
        else:
            g = gout
        for i in range(last, -1, -1):
            w, _ = layers[i]
            n_in, n_out = w.shape
            offset -= n_out
            grad[offset:offset + n_out] = g.sum(axis=0)
            offset -= n_in * n_out
            grad[offset:offset + n_in * n_out] = (inputs[i].T @ g).ravel()
            g = g @ w.T
            if i > 0:
                g = g * (pre[i - 1] > 0.0)
        input_grad = g[0] if single else g
        return grad, input_grad


# -- training utilities -------------------------------------------------------


class AdamState:
    """First/second moment accumulators for one parameter vector."""

    def __init__(self, n_params: int, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)


def apply_update(net: Mlp, opt: AdamState, grad: np.ndarray) -> None:
    """One Adam descent step in place.  Non-finite gradients abort the update
    with the parameters untouched."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != net.params.shape:
        raise ValueError("gradient shape does not match parameter vector")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    opt.t += 1
    opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grad
    opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grad * grad
    m_hat = opt.m / (1.0 - opt.beta1 ** opt.t)
    v_hat = opt.v / (1.0 - opt.beta2 ** opt.t)
    net.params -= opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    """Polyak step target <- tau * online + (1 - tau) * target, in place."""
    if not (0.0 <= tau <= 1.0):
        raise ValueError("tau must lie in [0, 1]")
    if target.layer_sizes != online.layer_sizes or \
            target.output_activation != online.output_activation:
        raise ValueError("target and online architectures differ")
    target.params *= 1.0 - tau
    target.params += tau * online.params


# -- serialization ------------------------------------------------------------


def save_mlp(net: Mlp, path) -> None:
    """Write magic, format version, architecture and little-endian float64
    parameters."""
    sizes = np.asarray(net.layer_sizes, dtype="<u4")
    header = struct.pack(
        "<4sHBB", _MAGIC, _FORMAT_VERSION,
        _ACTIVATIONS[net.output_activation], len(net.layer_sizes),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(sizes.tobytes())
        fh.write(net.params.astype("<f8").tobytes())


def load_mlp(path) -> Mlp:
    with open(path, "rb") as fh:
        blob = fh.read()
    head = struct.calcsize("<4sHBB")
    if len(blob) < head:
        raise ValueError("truncated parameter file")
    magic, version, act_code, n_sizes = struct.unpack("<4sHBB", blob[:head])
    if magic != _MAGIC:
        raise ValueError("not a network parameter file")
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    if act_code not in _ACTIVATION_NAMES:
        raise ValueError(f"unknown activation code {act_code}")
    sizes_end = head + 4 * n_sizes
    sizes = np.frombuffer(blob[head:sizes_end], dtype="<u4")
    if sizes.shape[0] != n_sizes:
        raise ValueError("truncated architecture descriptor")
    layer_sizes = tuple(int(s) for s in sizes)
    expected = param_count(layer_sizes)
    params = np.frombuffer(blob[sizes_end:], dtype="<f8")
    if params.shape[0] != expected:
        raise ValueError(
            f"parameter payload has {params.shape[0]} values, expected {expected}"
        )
    if not np.all(np.isfinite(params)):
        raise ValueError("parameter file contains non-finite values")
    return Mlp(layer_sizes, _ACTIVATION_NAMES[act_code], params.astype(np.float64))
