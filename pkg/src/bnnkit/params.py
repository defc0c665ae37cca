"""Flat parameter vectors, layouts with bias tagging, and Gaussian priors.

Every inference method in this package works on one contiguous float64
vector of network parameters.  A :class:`ParamLayout` records which span of
that vector belongs to which tensor and whether it is a bias, which is all
the structure the bias-treatment options need.  The prior is an isotropic
Gaussian ``N(mean, sigma^2 I)`` whose mean is either zero or a loaded
checkpoint (warm start).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, LayoutError

BIAS_INFORMATIVE = "informative"
BIAS_UNINFORMATIVE = "uninformative"
BIAS_MODES = (BIAS_INFORMATIVE, BIAS_UNINFORMATIVE)


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    offset: int
    length: int
    is_bias: bool


@dataclass(frozen=True)
class ParamLayout:
    """Contiguous, non-overlapping spans covering ``[0, total_len)`` exactly."""

    entries: tuple[LayoutEntry, ...]

    def __post_init__(self) -> None:
        expected = 0
        for e in self.entries:
            if e.offset != expected:
                raise LayoutError(
                    f"entry {e.name!r} starts at {e.offset}, expected {expected}"
                )
            if e.length < 1:
                raise LayoutError(f"entry {e.name!r} has non-positive length")
            expected = e.offset + e.length

    @property
    def total_len(self) -> int:
        if not self.entries:
            return 0
        last = self.entries[-1]
        return last.offset + last.length

    @cached_property
    def bias_mask(self) -> np.ndarray:
        """Boolean vector, True at bias coordinates."""
        mask = np.zeros(self.total_len, dtype=bool)
        for e in self.entries:
            if e.is_bias:
                mask[e.offset : e.offset + e.length] = True
        mask.flags.writeable = False
        return mask

    def first_mismatch(self, other: "ParamLayout") -> str | None:
        """Name of the first entry where the two layouts disagree, or None."""
        for a, b in zip(self.entries, other.entries):
            if (a.name, a.length, a.is_bias) != (b.name, b.length, b.is_bias):
                return a.name
        if len(self.entries) != len(other.entries):
            longer = self.entries if len(self.entries) > len(other.entries) else other.entries
            return longer[min(len(self.entries), len(other.entries))].name
        return None


def _freeze(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class FlatParams:
    """All backbone parameters as one immutable float64 vector."""

    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _freeze(self.values))
        if self.values.ndim != 1 or len(self.values) != self.layout.total_len:
            raise LayoutError(
                f"parameter vector has length {self.values.size}, "
                f"layout covers {self.layout.total_len}"
            )
        if not np.isfinite(self.values).all():
            raise ValueError("parameter vector contains non-finite entries")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class PriorSpec:
    """Isotropic Gaussian prior N(mean, sigma^2 I).

    With ``bias_mode="uninformative"`` the bias coordinates get a flat prior
    instead (their log-density gradient is zero and they drop out of KL and
    penalty terms).
    """

    mean: np.ndarray
    sigma: float
    bias_mode: str = BIAS_INFORMATIVE

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", _freeze(self.mean))
        if not self.sigma > 0:
            raise ConfigError(f"prior sigma must be positive, got {self.sigma}")
        if self.bias_mode not in BIAS_MODES:
            raise ConfigError(f"unknown bias_mode {self.bias_mode!r}")


def zero_prior(layout: ParamLayout, sigma: float, bias_mode: str = BIAS_INFORMATIVE) -> PriorSpec:
    """Prior centered at zero (no prior information)."""
    return PriorSpec(np.zeros(layout.total_len), sigma, bias_mode)


def prior_log_grad(theta: FlatParams, prior: PriorSpec) -> np.ndarray:
    """Gradient of log N(theta; mean, sigma^2 I) w.r.t. theta.

    Returns ``-(theta - mean) / sigma^2``; zero on bias coordinates when the
    bias prior is uninformative (flat).
    """
    if len(prior.mean) != len(theta):
        raise LayoutError(
            f"prior mean has length {len(prior.mean)}, parameters {len(theta)}"
        )
    grad = -(theta.values - prior.mean) / (prior.sigma * prior.sigma)
    if prior.bias_mode == BIAS_UNINFORMATIVE:
        grad = np.where(theta.layout.bias_mask, 0.0, grad)
    return grad


def prior_from_checkpoint(
    path, sigma: float, bias_mode: str, layout: ParamLayout
) -> PriorSpec:
    """Prior whose mean is the parameter vector stored in a checkpoint.

    The checkpoint layout must match ``layout`` exactly; the error names the
    first entry that differs.
    """
    from . import checkpoint  # local import, checkpoint depends on this module

    ckpt = checkpoint.load(path)
    bad = layout.first_mismatch(ckpt.layout)
    if bad is not None:
        raise LayoutError(f"checkpoint layout mismatch at entry {bad!r}")
    return PriorSpec(checkpoint.center_vector(ckpt), sigma, bias_mode)
