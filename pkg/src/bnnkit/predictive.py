"""Posterior-predictive evaluation by Monte-Carlo averaging.

``predict`` averages softmax probabilities (not logits) over ``nst``
independent posterior draws; ``nst=0`` is the posterior-mean shortcut, a
single deterministic forward pass at the sampler's center.  All four
inference methods plug in through the same :class:`SamplerHandle` contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import mlp
from .errors import ConfigError
from .params import FlatParams


@dataclass
class SamplerHandle:
    """Uniform access to a fitted posterior: a center and a draw function.

    ``kind`` is one of vi / mc_dropout / sgld / laplace / point; the handle
    owns its rng stream so repeated draws advance deterministically.
    """

    kind: str
    center: FlatParams
    draw_fn: Callable[[np.random.Generator], FlatParams]
    rng: np.random.Generator

    def mean(self) -> FlatParams:
        return self.center

    def draw(self) -> FlatParams:
        return self.draw_fn(self.rng)


def point_sampler(theta: FlatParams, rng: np.random.Generator) -> SamplerHandle:
    """Zero-variance posterior around a point estimate (vanilla baseline)."""
    return SamplerHandle("point", theta, lambda _gen: theta, rng)


@dataclass(frozen=True)
class PredictiveResult:
    probs: np.ndarray
    per_sample_probs: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.probs).all():
            raise ConfigError("predictive probabilities contain non-finite entries")
        if np.abs(self.probs.sum(axis=1) - 1.0).max() > 1e-9:
            raise ConfigError("predictive probability rows must sum to 1")


def _forward_probs(theta: FlatParams, inputs: np.ndarray, chunk: int = 4096) -> np.ndarray:
    n = inputs.shape[0]
    out = np.empty((n, mlp.spec_from_layout(theta.layout).num_classes))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        out[lo:hi] = mlp.softmax(mlp.forward_logits(theta, inputs[lo:hi]))
    return out


def predict(sampler: SamplerHandle, ds_eval, nst: int, keep_samples: bool = False) -> PredictiveResult:
    """Class probabilities for every example, averaged over ``nst`` draws."""
    if nst < 0:
        raise ConfigError(f"nst must be non-negative, got {nst}")
    if nst == 0:
        return PredictiveResult(_forward_probs(sampler.mean(), ds_eval.inputs))
    samples = []
    total = None
    for _ in range(nst):
        p = _forward_probs(sampler.draw(), ds_eval.inputs)
        total = p if total is None else total + p
        if keep_samples:
            samples.append(p)
    probs = total / nst
    return PredictiveResult(probs, np.stack(samples) if keep_samples else None)


def error_rate(pred: PredictiveResult, labels: np.ndarray) -> float:
    """Fraction of argmax mismatches; ties break toward the lowest class."""
    return float((pred.probs.argmax(axis=1) != np.asarray(labels)).mean())


def write_probs_csv(pred: PredictiveResult, path) -> None:
    """Dump per-example class probabilities for external tools."""
    k = pred.probs.shape[1]
    with open(path, "w") as fh:
        fh.write(",".join(f"p{j}" for j in range(k)) + "\n")
        for row in pred.probs:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
