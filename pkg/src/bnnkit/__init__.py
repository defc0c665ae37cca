"""bnnkit: approximate Bayesian inference for a small NumPy MLP.

Four posterior approximations over one flat parameter vector (mean-field
variational inference, parameter-space MC-dropout, SGLD, diagonal Laplace),
Monte-Carlo posterior predictives, and calibration metrics (ECE / MCE / NLL,
reliability plots, temperature scaling).
"""

from .calibration import BinTable, CalibrationReport, bin_accumulate, ece_mce, fit_temperature, nll
from .data import Dataset, SplitConfig, batches, load_idx, split, synth_blobs
from .laplace import LaplacePosterior, fisher_accumulate, la_fit, la_posterior, la_sample
from .mc_dropout import McdConfig, McdState, mcd_fit, mcd_loss_and_grad, mcd_mask, mcd_reparam
from .mlp import Batch, Mlp, MlpSpec, build_layout, forward_logits, init_params, loss_and_grad
from .params import (
    FlatParams,
    ParamLayout,
    PriorSpec,
    prior_from_checkpoint,
    prior_log_grad,
    zero_prior,
)
from .predictive import PredictiveResult, SamplerHandle, error_rate, point_sampler, predict
from .sgd import SgdConfig, fit_sgd, sgd_step, train_map
from .sgld import MomentAccumulator, SgldConfig, moments_update, sgld_fit, sgld_sample, sgld_step
from .vi import ViConfig, ViState, vi_fit, vi_kl, vi_loss_and_grads, vi_sample

__version__ = "0.1.0"
