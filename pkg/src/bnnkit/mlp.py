"""Fully connected ReLU classifier evaluated functionally.

Parameters are an input, never hidden state: ``loss_and_grad(theta, batch)``
is a pure function, so the same backbone serves the deterministic baseline
and every posterior sampler without modification.  The loss is the batch
mean of softmax cross-entropy divided by the temperature ``tau``, i.e. the
negative log-likelihood of ``p(y|x, theta) ∝ exp(-ce/tau)``, and the
gradient is exact reverse-mode backprop.

Cross-entropy is computed through log-sum-exp with max subtraction so large
logits cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .params import FlatParams, LayoutEntry, ParamLayout


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        if any(d < 1 for d in dims):
            raise ConfigError(f"all dimensions must be >= 1, got {dims}")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out, in) shape of each linear layer."""
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise ConfigError("batch inputs must be 2-D and labels 1-D")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ConfigError(
                f"batch has {self.inputs.shape[0]} rows but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]


def build_layout(spec: MlpSpec) -> ParamLayout:
    entries, offset = [], 0
    for i, (out, inp) in enumerate(spec.layer_shapes(), start=1):
        entries.append(LayoutEntry(f"W{i}", offset, out * inp, False))
        offset += out * inp
        entries.append(LayoutEntry(f"b{i}", offset, out, True))
        offset += out
    return ParamLayout(tuple(entries))


def init_params(spec: MlpSpec, seed: int) -> FlatParams:
    """Fan-in-scaled uniform weights, zero biases; deterministic under seed."""
    rng = np.random.default_rng(seed)
    chunks = []
    for out, inp in spec.layer_shapes():
        bound = 1.0 / np.sqrt(inp)
        chunks.append(rng.uniform(-bound, bound, size=out * inp))
        chunks.append(np.zeros(out))
    return FlatParams(np.concatenate(chunks), build_layout(spec))


def _unpack(spec: MlpSpec, values: np.ndarray):
    """Views of the flat vector as (W, b) pairs; no copies."""
    layers, offset = [], 0
    for out, inp in spec.layer_shapes():
        w = values[offset : offset + out * inp].reshape(out, inp)
        offset += out * inp
        b = values[offset : offset + out]
        offset += out
        layers.append((w, b))
    return layers


def _forward(spec: MlpSpec, values: np.ndarray, inputs: np.ndarray):
    """Returns (activations per layer input, pre-activations, logits)."""
    layers = _unpack(spec, values)
    acts = [np.asarray(inputs, dtype=np.float64)]
    pre = []
    h = acts[0]
    for li, (w, b) in enumerate(layers):
        z = h @ w.T + b
        pre.append(z)
        if li < len(layers) - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
    return acts, pre, pre[-1]


def forward_logits(theta: FlatParams, inputs: np.ndarray) -> np.ndarray:
    spec = spec_from_layout(theta.layout)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != spec.input_dim:
        raise ConfigError(
            f"inputs have shape {inputs.shape}, expected (*, {spec.input_dim})"
        )
    return _forward(spec, theta.values, inputs)[2]


def spec_from_layout(layout: ParamLayout) -> MlpSpec:
    """Recover the layer structure from a layout (bias lengths give widths)."""
    widths = [e.length for e in layout.entries if e.is_bias]
    first_w = layout.entries[0].length
    input_dim = first_w // widths[0]
    return MlpSpec(input_dim, tuple(widths[:-1]), widths[-1])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _loss_grad(spec: MlpSpec, values: np.ndarray, inputs: np.ndarray, labels: np.ndarray, tau: float):
    n = inputs.shape[0]
    acts, pre, logits = _forward(spec, values, inputs)
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean() / tau)

    probs = np.exp(logp)
    gz = probs
    gz[np.arange(n), labels] -= 1.0
    gz /= n * tau

    layers = _unpack(spec, values)
    grad = np.empty_like(values)
    gl = _unpack(spec, grad)  # writable views into grad
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        gw, gb = gl[li]
        np.matmul(gz.T, acts[li], out=gw)
        np.sum(gz, axis=0, out=gb)
        if li > 0:
            gz = (gz @ w) * (pre[li - 1] > 0.0)
    return loss, grad


def loss_and_grad(theta: FlatParams, batch: Batch, tau: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch (tau-scaled) and its exact gradient."""
    if len(batch) == 0:
        raise ConfigError("empty batch")
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    spec = spec_from_layout(theta.layout)
    return _loss_grad(spec, theta.values, batch.inputs, batch.labels, tau)


class Mlp:
    """Binds a spec to the functional ops, working on raw value vectors.

    Anything with this interface (loss_and_grad / dataset_nll /
    dataset_error over raw vectors) can drive the trainers; tests use tiny
    surrogate models the same way.
    """

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        self.layout = build_layout(spec)

    def init_values(self, seed: int) -> np.ndarray:
        return init_params(self.spec, seed).values

    def logits(self, values: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        return _forward(self.spec, values, inputs)[2]

    def loss_and_grad(self, values: np.ndarray, batch: Batch, tau: float = 1.0):
        if len(batch) == 0:
            raise ConfigError("empty batch")
        return _loss_grad(self.spec, values, batch.inputs, batch.labels, tau)

    def dataset_nll(self, values: np.ndarray, ds, tau: float = 1.0, chunk: int = 4096) -> float:
        """Mean tau-scaled cross-entropy over a whole dataset, no gradient."""
        total, n = 0.0, ds.inputs.shape[0]
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            logp = log_softmax(self.logits(values, ds.inputs[lo:hi]))
            total += -logp[np.arange(hi - lo), ds.labels[lo:hi]].sum()
        return float(total / (n * tau))

    def dataset_error(self, values: np.ndarray, ds, chunk: int = 4096) -> float:
        wrong, n = 0, ds.inputs.shape[0]
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            pred = self.logits(values, ds.inputs[lo:hi]).argmax(axis=1)
            wrong += int((pred != ds.labels[lo:hi]).sum())
        return wrong / n
