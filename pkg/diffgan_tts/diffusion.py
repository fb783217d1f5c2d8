"""Diffusion-process mathematics.

Variance schedule (VP-SDE discretization), closed-form and one-step
forward sampling, and the Gaussian posterior q(x_{t-1} | x_t, x_0).

Step indices are 1-based; t = 0 is the identity "diffusion" of x_0.
Noise is always passed in by the caller so every stochastic identity can
be tested with fixed vectors. All functions accept numpy arrays or
``Tensor`` operands (gradients flow through the affine combinations).
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Any, List, Optional, Tuple

import numpy as np

from .errors import ScheduleError, ShapeError

logger = logging.getLogger(__name__)

BETA_MIN = 0.1
BETA_MAX = 40.0
# running products above this length are taken in log space
LOG_SPACE_THRESHOLD = 64


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    beta_min: float
    beta_max: float
    betas: np.ndarray  # beta_1 .. beta_T
    alphas: np.ndarray  # 1 - beta_t
    alphas_cumprod: np.ndarray  # alpha_bar_0 .. alpha_bar_T, alpha_bar_0 = 1
    log_alphas_cumprod: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.log_alphas_cumprod is None:
            with np.errstate(divide="ignore"):
                logs = np.concatenate([[0.0], np.cumsum(np.log(self.alphas))])
            object.__setattr__(self, "log_alphas_cumprod", logs)

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alphas_cumprod[t])

    def one_minus_alpha_bar(self, t: int) -> float:
        """1 - alpha_bar_t without cancellation for small t."""
        return float(-np.expm1(self.log_alphas_cumprod[t]))

    def posterior_coefficients(self, t: int) -> Tuple[float, float, float]:
        """(x_0 coefficient, x_t coefficient, variance) of q(x_{t-1} | x_t, x_0)."""
        check_step(self, t, low=1)
        if t == 1:
            return 1.0, 0.0, 0.0
        ab_prev = self.alpha_bar(t - 1)
        denom = self.one_minus_alpha_bar(t)
        if denom == 0.0:
            # zero schedule: nothing was diffused
            return 1.0, 0.0, 0.0
        beta = self.beta(t)
        c0 = math.sqrt(ab_prev) * beta / denom
        one_minus_prev = self.one_minus_alpha_bar(t - 1)
        ct = math.sqrt(self.alpha(t)) * one_minus_prev / denom
        var = one_minus_prev / denom * beta
        return c0, ct, max(var, 0.0)

    def rows(self) -> List[Tuple[int, float, float, float]]:
        return [(t, self.beta(t), self.alpha(t), self.alpha_bar(t)) for t in range(1, self.T + 1)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "beta", "alpha", "alpha_bar"])
        for t, b, a, ab in self.rows():
            writer.writerow([t, repr(b), repr(a), repr(ab)])
        return buf.getvalue()


@dataclass(frozen=True)
class PosteriorParams:
    mean: Any
    variance: float


def vp_exponents(T: int, beta_min: float, beta_max: float) -> np.ndarray:
    """x_t with beta_t = 1 - exp(-x_t) for the VP-SDE discretization."""
    t = np.arange(1, T + 1, dtype=np.float64)
    return beta_min / T + 0.5 * (beta_max - beta_min) * (2.0 * t - 1.0) / (T * T)


def make_variance_schedule(T: int, beta_min: float = BETA_MIN, beta_max: float = BETA_MAX) -> DiffusionSchedule:
    if int(T) != T or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T!r}")
    if beta_min < 0 or beta_max < beta_min:
        raise ScheduleError(f"need beta_max >= beta_min >= 0, got beta_min={beta_min}, beta_max={beta_max}")
    T = int(T)
    exponents = vp_exponents(T, beta_min, beta_max)
    betas = -np.expm1(-exponents)
    # log alpha_t = -x_t exactly
    alphas = np.exp(-exponents)
    # sum of x_i for i <= t in closed form: sum(2i - 1) = t^2
    s = np.arange(T + 1, dtype=np.float64)
    log_alphas_cumprod = -(beta_min * s / T + 0.5 * (beta_max - beta_min) * (s * s) / (T * T))
    if T > LOG_SPACE_THRESHOLD:
        alphas_cumprod = np.exp(log_alphas_cumprod)
    else:
        alphas_cumprod = np.concatenate([[1.0], np.cumprod(alphas)])
    logger.debug("variance schedule T=%d beta_min=%g beta_max=%g", T, beta_min, beta_max)
    return DiffusionSchedule(T, float(beta_min), float(beta_max), betas, alphas, alphas_cumprod, log_alphas_cumprod)


def check_step(schedule: DiffusionSchedule, t: int, low: int = 0) -> None:
    if not (low <= t <= schedule.T):
        raise ScheduleError(f"step t={t} outside [{low}, {schedule.T}]")


def _shape(x: Any) -> Tuple[int, ...]:
    return tuple(x.shape) if hasattr(x, "shape") else np.shape(x)


def _check_same_shape(op: str, a: Any, b: Any) -> None:
    if _shape(a) != _shape(b):
        raise ShapeError(op, _shape(a), _shape(b))


def diffuse_closed_form(x0: Any, t: int, schedule: DiffusionSchedule, noise: Any) -> Any:
    """Sample q(x_t | x_0) = N(sqrt(ab_t) x_0, (1 - ab_t) I) with the given noise."""
    check_step(schedule, t)
    _check_same_shape("diffuse_closed_form", x0, noise)
    if t == 0:
        return x0
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(schedule.one_minus_alpha_bar(t)) * noise


def diffuse_stepwise(x_prev: Any, t: int, schedule: DiffusionSchedule, noise: Any) -> Any:
    """One chain step q(x_t | x_{t-1}) = N(sqrt(1 - beta_t) x_{t-1}, beta_t I)."""
    check_step(schedule, t, low=1)
    _check_same_shape("diffuse_stepwise", x_prev, noise)
    beta = schedule.beta(t)
    return math.sqrt(1.0 - beta) * x_prev + math.sqrt(beta) * noise


def posterior_params(x0: Any, xt: Any, t: int, schedule: DiffusionSchedule) -> PosteriorParams:
    check_step(schedule, t, low=1)
    _check_same_shape("posterior_params", x0, xt)
    if t == 1:
        return PosteriorParams(mean=x0, variance=0.0)
    c0, ct, var = schedule.posterior_coefficients(t)
    return PosteriorParams(mean=c0 * x0 + ct * xt, variance=var)


def posterior_sample(params: PosteriorParams, noise: Any) -> Any:
    if params.variance < 0:
        raise ScheduleError(f"posterior variance must be nonnegative, got {params.variance}")
    _check_same_shape("posterior_sample", params.mean, noise)
    if params.variance == 0.0:
        return params.mean
    return params.mean + math.sqrt(params.variance) * noise


__all__ = [
    "BETA_MIN",
    "BETA_MAX",
    "DiffusionSchedule",
    "PosteriorParams",
    "vp_exponents",
    "make_variance_schedule",
    "check_step",
    "diffuse_closed_form",
    "diffuse_stepwise",
    "posterior_params",
    "posterior_sample",
]
