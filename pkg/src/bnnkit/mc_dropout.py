"""Parameter-space MC-dropout.

The variational posterior is a per-coordinate mixture of two spiky (near
delta) Gaussians, one at the variational mean ``m`` and one at the prior
mean, mixed with dropout probability ``p``.  A reparameterized sample is

    theta = z * m + (1 - z) * prior_mean,   z_i ~ Bernoulli(1 - p),

i.e. dropped coordinates snap to the prior mean, which reduces to classical
weight dropout when the prior mean is zero.  The ELBO's KL surrogate is the
scaled squared deviation ``(1-p)/(2 sigma^2 N) * ||m - mean||^2`` (times the
``kld`` discount), and its gradient masks the data term by z:

    d/dm = batch grad * z + kld * (1-p) / (sigma^2 N) * (m - mean).

Bias options: ``gaussian`` keeps biases undropped (their dropout probability
is 0, so their penalty factor is 1), ``spikymix`` treats them exactly like
weights, ``ignore`` exempts them from both dropout and penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data, predictive
from .errors import ConfigError, DivergenceError
from .mlp import Batch, Mlp, MlpSpec, init_params
from .params import FlatParams, ParamLayout, PriorSpec
from .seeding import seed_streams

BIAS_GAUSSIAN = "gaussian"
BIAS_SPIKYMIX = "spikymix"
BIAS_IGNORE = "ignore"
BIAS_OPTS = (BIAS_GAUSSIAN, BIAS_SPIKYMIX, BIAS_IGNORE)


@dataclass(frozen=True)
class McdState:
    m: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "m", np.asarray(self.m, dtype=np.float64))
        if not np.isfinite(self.m).all():
            raise ConfigError("variational mean contains non-finite entries")


@dataclass(frozen=True)
class McdConfig:
    prior: PriorSpec
    p_drop: float = 0.1
    bias_opt: str = BIAS_SPIKYMIX
    kld: float = 1e-3
    nst: int = 0
    lr: float = 1e-2
    momentum: float = 0.5
    epochs: int = 100
    batch_size: int = 128
    seed: int = 0
    early_stop_patience: int = 0
    tau: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_drop <= 1.0:
            raise ConfigError(f"p_drop must be in [0,1], got {self.p_drop}")
        if self.bias_opt not in BIAS_OPTS:
            raise ConfigError(f"unknown bias option {self.bias_opt!r}")
        if self.kld < 0:
            raise ConfigError(f"kld must be non-negative, got {self.kld}")


def mcd_mask(
    length: int, p_drop: float, bias_opt: str, layout: ParamLayout, rng: np.random.Generator
) -> np.ndarray:
    """Keep indicators z: P(z=1) = 1 - p_drop; biases never drop unless spikymix."""
    z = (rng.random(length) >= p_drop).astype(np.float64)
    if bias_opt != BIAS_SPIKYMIX:
        z = np.where(layout.bias_mask, 1.0, z)
    return z


def mcd_reparam(state: McdState, prior: PriorSpec, z: np.ndarray) -> np.ndarray:
    """theta = z * m + (1 - z) * prior mean."""
    return z * state.m + (1.0 - z) * prior.mean


def penalty_factors(p_drop: float, bias_opt: str, layout: ParamLayout) -> np.ndarray:
    """Per-coordinate (1 - dropout probability) entering the KL surrogate.

    Non-bias coordinates always carry 1-p; biases carry 1 (gaussian, p_b=0),
    1-p (spikymix), or 0 (ignore: excluded from the penalty).
    """
    keep = np.full(layout.total_len, 1.0 - p_drop)
    if bias_opt == BIAS_GAUSSIAN:
        keep = np.where(layout.bias_mask, 1.0, keep)
    elif bias_opt == BIAS_IGNORE:
        keep = np.where(layout.bias_mask, 0.0, keep)
    return keep


def mcd_loss_and_grad(
    state: McdState,
    prior: PriorSpec,
    batch: Batch,
    n_total: float,
    kld: float,
    z: np.ndarray,
    model: Mlp,
    bias_opt: str = BIAS_SPIKYMIX,
    p_drop: float = 0.1,
    tau: float = 1.0,
) -> tuple[float, np.ndarray]:
    """ELBO loss at one dropout mask and its gradient w.r.t. m."""
    if n_total <= 0:
        raise ConfigError("n_total must be positive")
    theta = mcd_reparam(state, prior, z)
    loss, g_theta = model.loss_and_grad(theta, batch, tau)
    grad = g_theta * z

    if kld != 0.0:
        keep = penalty_factors(p_drop, bias_opt, model.layout)
        dev = state.m - prior.mean
        sig2n = (prior.sigma * prior.sigma) * n_total
        loss = loss + kld * float((keep * dev**2).sum()) / (2.0 * sig2n)
        grad = grad + (kld * keep / sig2n) * dev

    if not np.isfinite(loss):
        raise DivergenceError("non-finite dropout loss")
    return loss, grad


def mcd_fit(
    spec: MlpSpec,
    ds_train: data.Dataset,
    ds_valid: data.Dataset,
    cfg: McdConfig,
    on_epoch=None,
    init_at_prior_mean: bool = False,
) -> McdState:
    """SGD on m, one dropout mask per minibatch; validation at theta = m."""
    model = Mlp(spec)
    streams = seed_streams(cfg.seed)
    rng = streams.sampler_rng()
    m = cfg.prior.mean.copy() if init_at_prior_mean else init_params(spec, streams.init_seed).values.copy()
    vel = np.zeros_like(m)
    n_total = float(len(ds_train))
    best = (np.inf, m.copy())
    since_best = 0

    for epoch in range(cfg.epochs):
        loss_sum, nb = 0.0, 0
        for batch in data.batches(ds_train, cfg.batch_size, streams.shuffle_seed, epoch):
            z = mcd_mask(m.shape[0], cfg.p_drop, cfg.bias_opt, model.layout, rng)
            loss, grad = mcd_loss_and_grad(
                McdState(m), cfg.prior, batch, n_total, cfg.kld, z, model,
                cfg.bias_opt, cfg.p_drop, cfg.tau,
            )
            vel = cfg.momentum * vel + grad
            m = m - cfg.lr * vel
            loss_sum += loss
            nb += 1

        valid_nll = model.dataset_nll(m, ds_valid, cfg.tau)
        if not np.isfinite(valid_nll):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        if on_epoch is not None:
            on_epoch(
                {
                    "epoch": epoch,
                    "train_loss": loss_sum / nb,
                    "valid_loss": valid_nll,
                    "valid_error": model.dataset_error(m, ds_valid),
                }
            )
        if valid_nll < best[0]:
            best, since_best = (valid_nll, m.copy()), 0
        else:
            since_best += 1
            if cfg.early_stop_patience > 0 and since_best >= cfg.early_stop_patience:
                break
    return McdState(best[1])


def make_sampler(
    state: McdState,
    prior: PriorSpec,
    p_drop: float,
    bias_opt: str,
    layout: ParamLayout,
    rng: np.random.Generator,
) -> predictive.SamplerHandle:
    """Test-time sampler: fresh dropout masks (the spiky components are
    delta-like, so mask draws are exact mixture draws); mean is theta = m."""
    mean = FlatParams(state.m, layout)

    def draw(gen: np.random.Generator) -> FlatParams:
        z = mcd_mask(len(state.m), p_drop, bias_opt, layout, gen)
        return FlatParams(mcd_reparam(state, prior, z), layout)

    return predictive.SamplerHandle("mc_dropout", mean, draw, rng)


def save_state(path, state: McdState, layout: ParamLayout) -> None:
    from . import checkpoint

    checkpoint.save(path, "mc_dropout", layout, {"m": state.m})


def load_state(path) -> tuple[McdState, ParamLayout]:
    from . import checkpoint

    ckpt = checkpoint.load(path)
    return McdState(ckpt.arrays["m"]), ckpt.layout
