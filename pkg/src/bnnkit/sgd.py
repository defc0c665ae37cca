"""SGD-with-momentum trainer.

One update loop serves both the deterministic baseline (weight decay toward
zero or toward the prior mean, with an option to exempt biases) and the MAP
stage of the Laplace method: the MAP objective

    mean batch loss + (1 / (sigma^2 * |D| * ninflate)) * 0.5 * ||theta - mean||^2

is exactly weight decay with coefficient ``1 / (sigma^2 * |D| * ninflate)``
centered at the prior mean, dropping bias terms when the bias prior is
uninformative.  ``train_map`` builds that config and reuses ``fit_sgd``, so
the objective identity holds bit-for-bit.

Early stopping: validation mean loss, patience counted in epochs, patience 0
disables stopping; the returned parameters are always those of the
best-validation-loss epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import data
from .errors import ConfigError, DivergenceError
from .params import BIAS_UNINFORMATIVE, FlatParams, PriorSpec

WD_CENTER_ZERO = "zero"
WD_CENTER_PRIOR = "prior_mean"
BIAS_PENALTY = "penalty"
BIAS_IGNORE = "ignore"


@dataclass(frozen=True)
class SgdConfig:
    lr: float
    momentum: float = 0.0
    epochs: int = 100
    wd: float = 0.0
    wd_center: str = WD_CENTER_ZERO
    bias_penalty: str = BIAS_PENALTY
    early_stop_patience: int = 0
    batch_size: int = 128

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0,1), got {self.momentum}")
        if self.wd < 0:
            raise ConfigError(f"wd must be non-negative, got {self.wd}")
        if self.wd_center not in (WD_CENTER_ZERO, WD_CENTER_PRIOR):
            raise ConfigError(f"unknown wd_center {self.wd_center!r}")
        if self.bias_penalty not in (BIAS_PENALTY, BIAS_IGNORE):
            raise ConfigError(f"unknown bias_penalty {self.bias_penalty!r}")


def sgd_step(
    theta: np.ndarray,
    grad: np.ndarray,
    velocity: np.ndarray,
    cfg: SgdConfig,
    center: np.ndarray | None = None,
    bias_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """v' = momentum*v + (grad + wd*mask*(theta - center)); theta' = theta - lr*v'."""
    g = grad
    if cfg.wd != 0.0:
        dev = theta if center is None else theta - center
        decay = cfg.wd * dev
        if cfg.bias_penalty == BIAS_IGNORE and bias_mask is not None:
            decay = np.where(bias_mask, 0.0, decay)
        g = grad + decay
    velocity = cfg.momentum * velocity + g
    return theta - cfg.lr * velocity, velocity


EpochHook = Callable[[dict], None] | None


def fit_sgd(
    model,
    theta0: FlatParams,
    ds_train: data.Dataset,
    ds_valid: data.Dataset,
    cfg: SgdConfig,
    center: np.ndarray | None = None,
    tau: float = 1.0,
    shuffle_seed: int = 0,
    on_epoch: EpochHook = None,
) -> FlatParams:
    values = theta0.values.copy()
    velocity = np.zeros_like(values)
    bias_mask = theta0.layout.bias_mask

    best_loss, best_values, since_best = math.inf, values.copy(), 0
    for epoch in range(cfg.epochs):
        loss_sum, nb = 0.0, 0
        for batch in data.batches(ds_train, cfg.batch_size, shuffle_seed, epoch):
            loss, grad = model.loss_and_grad(values, batch, tau)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            values, velocity = sgd_step(values, grad, velocity, cfg, center, bias_mask)
            loss_sum += loss
            nb += 1

        valid_loss = model.dataset_nll(values, ds_valid, tau)
        if on_epoch is not None:
            on_epoch(
                {
                    "epoch": epoch,
                    "train_loss": loss_sum / nb,
                    "valid_loss": valid_loss,
                    "valid_error": model.dataset_error(values, ds_valid),
                }
            )
        if valid_loss < best_loss:
            best_loss, best_values, since_best = valid_loss, values.copy(), 0
        else:
            since_best += 1
            if cfg.early_stop_patience > 0 and since_best >= cfg.early_stop_patience:
                break
    return FlatParams(best_values, theta0.layout)


def map_weight_decay(prior: PriorSpec, n_train: int, ninflate: float = 1.0) -> float:
    """Weight-decay coefficient equivalent to the Gaussian prior term."""
    return 1.0 / ((prior.sigma * prior.sigma) * n_train * ninflate)


def train_map(
    model,
    theta0: FlatParams,
    prior: PriorSpec,
    ds_train: data.Dataset,
    ds_valid: data.Dataset,
    cfg: SgdConfig,
    ninflate: float = 1.0,
    tau: float = 1.0,
    shuffle_seed: int = 0,
    on_epoch: EpochHook = None,
) -> FlatParams:
    """MAP estimate under the Gaussian prior, via the SGD loop above."""
    map_cfg = replace(
        cfg,
        wd=map_weight_decay(prior, len(ds_train), ninflate),
        wd_center=WD_CENTER_PRIOR,
        bias_penalty=BIAS_IGNORE if prior.bias_mode == BIAS_UNINFORMATIVE else BIAS_PENALTY,
    )
    return fit_sgd(
        model, theta0, ds_train, ds_valid, map_cfg,
        center=prior.mean, tau=tau, shuffle_seed=shuffle_seed, on_epoch=on_epoch,
    )
