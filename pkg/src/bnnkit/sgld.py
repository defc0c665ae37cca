"""Stochastic-gradient Langevin dynamics.

Each minibatch applies the Langevin recurrence on the per-example
normalized log-posterior,

    theta' = theta + (lr/2) * (prior_log_grad(theta) / N_eff - batch_grad)
             + nd * sqrt(lr / N_eff) * noise,      noise ~ N(0, I)

where ``batch_grad`` is the gradient of the tau-scaled mean batch loss and
``N_eff = |D| * ninflate``.  This is exactly the textbook recurrence
``theta + (eta/2) * grad(log prior + (|D|/|B|) sum log-likelihood) +
noise * sqrt(eta)`` run at step ``eta = lr / N_eff`` (multiply through to
check), so the chain still targets the true posterior; normalizing keeps
``lr`` on the same scale as every other trainer here, where the same
learning rate is shared across methods.  ``nd`` discounts the injected
noise.  After a burn-in period, every ``thin``-th iterate feeds a Welford
running-moment estimate; test-time samples come from the Gaussian fitted
with those means and variances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data, predictive
from .errors import ConfigError, NumericError
from .mlp import Mlp, MlpSpec, init_params
from .params import FlatParams, ParamLayout, PriorSpec, prior_log_grad
from .seeding import seed_streams


@dataclass(frozen=True)
class SgldConfig:
    prior: PriorSpec
    lr: float = 1e-2
    ninflate: float = 1e3
    nd: float = 0.1
    burnin_epochs: int = 5
    thin_steps: int = 10
    epochs: int = 100
    batch_size: int = 128
    nst: int = 0
    seed: int = 0
    tau: float = 1.0

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.ninflate < 1:
            raise ConfigError(f"ninflate must be >= 1, got {self.ninflate}")
        if self.nd < 0:
            raise ConfigError(f"nd must be non-negative, got {self.nd}")
        if self.thin_steps < 1:
            raise ConfigError(f"thin must be >= 1, got {self.thin_steps}")
        if self.epochs <= self.burnin_epochs:
            raise ConfigError(
                f"epochs ({self.epochs}) must exceed burn-in ({self.burnin_epochs})"
            )


@dataclass(frozen=True)
class MomentAccumulator:
    """Welford running mean / sum of squared deviations."""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    def variance(self) -> np.ndarray:
        """Population variance; zero when only one sample was seen."""
        if self.count < 1:
            raise NumericError("no samples accumulated")
        if self.count == 1:
            return np.zeros_like(self.mean)
        return self.m2 / self.count


def moments_init(length: int) -> MomentAccumulator:
    return MomentAccumulator(0, np.zeros(length), np.zeros(length))


def moments_update(acc: MomentAccumulator, theta: np.ndarray) -> MomentAccumulator:
    count = acc.count + 1
    delta = theta - acc.mean
    mean = acc.mean + delta / count
    m2 = acc.m2 + delta * (theta - mean)
    return MomentAccumulator(count, mean, m2)


def sgld_step(
    theta: np.ndarray,
    prior: PriorSpec,
    batch_grad: np.ndarray,
    n_eff: float,
    lr: float,
    nd: float,
    noise: np.ndarray,
    layout: ParamLayout,
) -> np.ndarray:
    """One Langevin update; ``batch_grad`` is the tau-scaled mean-loss gradient.

    Runs the normalized recurrence above, i.e. the plain Langevin step at an
    effective step size of ``lr / n_eff``."""
    if n_eff <= 0:
        raise ConfigError("n_eff must be positive")
    pg = prior_log_grad(FlatParams(theta, layout), prior)
    out = theta + (lr / 2.0) * (pg / n_eff - batch_grad) + nd * np.sqrt(lr / n_eff) * noise
    if not np.isfinite(out).all():
        raise NumericError("non-finite SGLD update")
    return out


def sgld_fit(
    spec: MlpSpec,
    ds_train: data.Dataset,
    ds_valid: data.Dataset,
    cfg: SgldConfig,
    on_epoch=None,
    init_at_prior_mean: bool = False,
) -> MomentAccumulator:
    """Run the chain, collect post-burn-in thinned iterates into moments."""
    model = Mlp(spec)
    post_epochs = cfg.epochs - cfg.burnin_epochs
    spe = data.steps_per_epoch(len(ds_train), cfg.batch_size)
    if post_epochs * spe < cfg.thin_steps:
        raise ConfigError(
            f"no sample would be collected: {post_epochs} post-burn-in epochs of "
            f"{spe} steps with thin={cfg.thin_steps}"
        )

    streams = seed_streams(cfg.seed)
    rng = streams.sampler_rng()
    theta = cfg.prior.mean.copy() if init_at_prior_mean else init_params(spec, streams.init_seed).values.copy()
    n_eff = float(len(ds_train)) * cfg.ninflate
    acc = moments_init(theta.shape[0])
    post_step = 0

    for epoch in range(cfg.epochs):
        loss_sum, nb = 0.0, 0
        for batch in data.batches(ds_train, cfg.batch_size, streams.shuffle_seed, epoch):
            loss, grad = model.loss_and_grad(theta, batch, cfg.tau)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            noise = rng.standard_normal(theta.shape[0])
            theta = sgld_step(theta, cfg.prior, grad, n_eff, cfg.lr, cfg.nd, noise, model.layout)
            loss_sum += loss
            nb += 1
            if epoch >= cfg.burnin_epochs:
                post_step += 1
                if post_step % cfg.thin_steps == 0:
                    acc = moments_update(acc, theta)

        if on_epoch is not None:
            on_epoch(
                {
                    "epoch": epoch,
                    "train_loss": loss_sum / nb,
                    "valid_loss": model.dataset_nll(theta, ds_valid, cfg.tau),
                    "valid_error": model.dataset_error(theta, ds_valid),
                }
            )
    return acc


def sgld_sample(acc: MomentAccumulator, rng: np.random.Generator, layout: ParamLayout) -> FlatParams:
    """Draw from the fitted diagonal Gaussian; count=1 collapses to the mean."""
    std = np.sqrt(acc.variance())
    return FlatParams(acc.mean + std * rng.standard_normal(acc.mean.shape[0]), layout)


def make_sampler(acc: MomentAccumulator, layout: ParamLayout, rng: np.random.Generator) -> predictive.SamplerHandle:
    mean = FlatParams(acc.mean, layout)
    return predictive.SamplerHandle("sgld", mean, lambda gen: sgld_sample(acc, gen, layout), rng)


def save_state(path, acc: MomentAccumulator, layout: ParamLayout) -> None:
    from . import checkpoint

    checkpoint.save(path, "sgld", layout, {"mean": acc.mean, "m2": acc.m2}, {"count": acc.count})


def load_state(path) -> tuple[MomentAccumulator, ParamLayout]:
    from . import checkpoint

    ckpt = checkpoint.load(path)
    return MomentAccumulator(int(ckpt.meta["count"]), ckpt.arrays["mean"], ckpt.arrays["m2"]), ckpt.layout
