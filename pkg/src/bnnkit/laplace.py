"""Diagonal Laplace approximation around a MAP estimate.

The Hessian of the log-posterior is approximated by the diagonal empirical
Fisher: per-example log-likelihood gradients, squared elementwise and summed
over the (inflation-scaled) training set.  The posterior is then the
factorized Gaussian

    v_i = 1 / (1/sigma^2 + F_i + damping)

centered at the MAP estimate; with an uninformative bias prior the 1/sigma^2
term is dropped on bias coordinates.  ``damping`` guards against coordinates
whose Fisher mass is ~0, where the variance would otherwise blow up to
sigma^2 (or to infinity for uninformative biases).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data, predictive, sgd
from .errors import NumericError
from .mlp import Batch, Mlp, MlpSpec, init_params
from .params import BIAS_UNINFORMATIVE, FlatParams, ParamLayout, PriorSpec
from .seeding import seed_streams

DEFAULT_DAMPING = 1e-4


@dataclass(frozen=True)
class LaplacePosterior:
    theta_star: np.ndarray
    v: np.ndarray
    damping: float
    layout: ParamLayout

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta_star", np.asarray(self.theta_star, dtype=np.float64))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64))
        if self.theta_star.shape != self.v.shape:
            raise NumericError("theta_star and v must have equal length")
        if not (np.isfinite(self.v).all() and (self.v > 0).all()):
            raise NumericError("posterior variance must be positive and finite")


def fisher_accumulate(
    model,
    theta_star: FlatParams,
    ds: data.Dataset,
    tau: float = 1.0,
    ninflate: float = 1.0,
) -> np.ndarray:
    """Diagonal empirical Fisher: inflation-scaled sum of squared per-example
    log-likelihood gradients, one backward pass per example."""
    fisher = np.zeros(len(theta_star))
    for n in range(len(ds)):
        batch = Batch(ds.inputs[n : n + 1], ds.labels[n : n + 1])
        _, g = model.loss_and_grad(theta_star.values, batch, tau)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite per-example gradient at index {n}")
        fisher += g * g
    return fisher * ninflate


def la_posterior(
    theta_star: FlatParams,
    fisher: np.ndarray,
    prior: PriorSpec,
    damping: float = DEFAULT_DAMPING,
) -> LaplacePosterior:
    """Combine prior precision, Fisher and damping into per-coordinate variances."""
    precision = 1.0 / (prior.sigma * prior.sigma) + fisher + damping
    if prior.bias_mode == BIAS_UNINFORMATIVE:
        precision = np.where(theta_star.layout.bias_mask, fisher + damping, precision)
    with np.errstate(divide="ignore"):
        v = 1.0 / precision
    return LaplacePosterior(theta_star.values, v, damping, theta_star.layout)


def la_fit(
    spec: MlpSpec,
    ds_train: data.Dataset,
    ds_valid: data.Dataset,
    sgd_cfg: sgd.SgdConfig,
    prior: PriorSpec,
    ninflate: float = 1.0,
    damping: float = DEFAULT_DAMPING,
    tau: float = 1.0,
    seed: int = 0,
    on_epoch=None,
    init_at_prior_mean: bool = False,
) -> LaplacePosterior:
    """MAP estimate, then Fisher accumulation over the training set."""
    model = Mlp(spec)
    streams = seed_streams(seed)
    theta0 = FlatParams(prior.mean, model.layout) if init_at_prior_mean else init_params(spec, streams.init_seed)
    theta_star = sgd.train_map(
        model, theta0, prior, ds_train, ds_valid, sgd_cfg,
        ninflate=ninflate, tau=tau, shuffle_seed=streams.shuffle_seed, on_epoch=on_epoch,
    )
    fisher = fisher_accumulate(model, theta_star, ds_train, tau, ninflate)
    return la_posterior(theta_star, fisher, prior, damping)


def la_sample(post: LaplacePosterior, rng: np.random.Generator) -> FlatParams:
    std = np.sqrt(post.v)
    return FlatParams(post.theta_star + std * rng.standard_normal(post.theta_star.shape[0]), post.layout)


def make_sampler(post: LaplacePosterior, rng: np.random.Generator) -> predictive.SamplerHandle:
    mean = FlatParams(post.theta_star, post.layout)
    return predictive.SamplerHandle("laplace", mean, lambda gen: la_sample(post, gen), rng)


def save_state(path, post: LaplacePosterior) -> None:
    from . import checkpoint

    checkpoint.save(
        path, "laplace", post.layout,
        {"theta_star": post.theta_star, "v": post.v}, {"damping": post.damping},
    )


def load_state(path) -> LaplacePosterior:
    from . import checkpoint

    ckpt = checkpoint.load(path)
    return LaplacePosterior(
        ckpt.arrays["theta_star"], ckpt.arrays["v"], float(ckpt.meta["damping"]), ckpt.layout
    )
