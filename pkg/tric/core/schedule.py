"""
Cosine noise schedule, forward noising, the x0-parameterised ancestral step
and classifier-free guidance.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .numcore import ShapeMismatchError

COSINE_OFFSET = 0.008
BETA_MIN = 1e-8
BETA_MAX = 0.999
SAMPLING_VARIANCES = ("posterior", "beta")

StepIndex = Union[int, np.ndarray]


@dataclass(frozen=True)
class DiffusionSchedule:
    """
    Per-step coefficients stored with T+1 entries: index 0 is the clean
    endpoint (beta 0, alpha_bar 1) and indices 1..T are the noising steps.
    """
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __len__(self) -> int:
        return self.T

    def check_step(self, t: StepIndex, lowest: int = 1):
        steps = np.asarray(t)
        if steps.size == 0 or steps.min() < lowest or steps.max() > self.T:
            raise ValueError(f"Diffusion step {t} outside [{lowest}, {self.T}]")


@dataclass(frozen=True)
class GuidanceConfig:
    g: float = 4.0
    uncond_token: str = ""

    def __post_init__(self):
        if self.g < 0:
            raise ValueError(f"Guidance scale must be non-negative, got {self.g}")


def cosine_schedule(T: int, offset: float = COSINE_OFFSET) -> DiffusionSchedule:
    if T < 1:
        raise ValueError(f"Diffusion needs at least one step, got T={T}")
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((steps / T + offset) / (1.0 + offset)) * np.pi / 2.0) ** 2
    alpha_bar_raw = np.clip(f / f[0], 0.0, 1.0)
    beta = np.zeros(T + 1)
    beta[1:] = np.clip(1.0 - alpha_bar_raw[1:] / alpha_bar_raw[:-1], BETA_MIN, BETA_MAX)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for array in (beta, alpha, alpha_bar):
        array.setflags(write=False)
    return DiffusionSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _per_item(coefficient: np.ndarray, ndim: int) -> np.ndarray:
    """Shape per-item coefficients [B] so they broadcast over [B, ...]."""
    coefficient = np.asarray(coefficient)
    return coefficient.reshape(coefficient.shape + (1,) * (ndim - coefficient.ndim))


def q_sample(schedule: DiffusionSchedule, x0: np.ndarray, t: StepIndex, eps: np.ndarray) -> np.ndarray:
    """
    sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps. ``t`` is a single step
    or one step per leading batch item. t=0 returns x0.
    """
    x0, eps = np.asarray(x0), np.asarray(eps)
    if x0.shape != eps.shape:
        raise ShapeMismatchError(f"q_sample: x0 {x0.shape} and eps {eps.shape} differ")
    schedule.check_step(t, lowest=0)
    alpha_bar = _per_item(schedule.alpha_bar[np.asarray(t)], x0.ndim)
    return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * eps


def posterior_coefficients(schedule: DiffusionSchedule, t: int):
    """(x0 coefficient, x_t coefficient, posterior variance) at step t."""
    beta = schedule.beta[t]
    alpha_bar, alpha_bar_prev = schedule.alpha_bar[t], schedule.alpha_bar[t - 1]
    coef_x0 = np.sqrt(alpha_bar_prev) * beta / (1.0 - alpha_bar)
    coef_xt = np.sqrt(schedule.alpha[t]) * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    variance = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    return coef_x0, coef_xt, variance


def ddpm_step(schedule: DiffusionSchedule, x_t: np.ndarray, x0_hat: np.ndarray, t: int,
              noise: np.ndarray, variance: str = "posterior") -> np.ndarray:
    """One reverse step x_t -> x_{t-1} from a clean-motion prediction."""
    if np.ndim(t) != 0:
        raise ValueError("ddpm_step takes a single step index shared by the batch")
    schedule.check_step(t)
    if variance not in SAMPLING_VARIANCES:
        raise ValueError(f"Unknown sampling variance '{variance}', expected one of {SAMPLING_VARIANCES}")
    x_t, x0_hat = np.asarray(x_t), np.asarray(x0_hat)
    if x_t.shape != x0_hat.shape or x_t.shape != np.shape(noise):
        raise ShapeMismatchError(
            f"ddpm_step: x_t {x_t.shape}, x0_hat {x0_hat.shape} and noise {np.shape(noise)} must match")
    coef_x0, coef_xt, posterior_variance = posterior_coefficients(schedule, t)
    mean = coef_x0 * x0_hat + coef_xt * x_t
    if t == 1:
        return mean
    sigma = np.sqrt(posterior_variance if variance == "posterior" else schedule.beta[t])
    return mean + sigma * np.asarray(noise)


def cfg_combine(pred_cond, pred_uncond, g: float):
    """
    uncond + g (cond - uncond), evaluated as (1 - g) uncond + g cond so that
    g=1 and g=0 return either prediction exactly.
    """
    if np.shape(pred_cond) != np.shape(pred_uncond):
        raise ShapeMismatchError(
            f"cfg_combine: conditional {np.shape(pred_cond)} and unconditional {np.shape(pred_uncond)} differ")
    if g == 1.0:
        return pred_cond
    if g == 0.0:
        return pred_uncond
    return (1.0 - g) * pred_uncond + g * pred_cond


def p_sample_loop(
    schedule: DiffusionSchedule,
    predict_x0: Callable[[np.ndarray, int], np.ndarray],
    x_T: np.ndarray,
    rng: np.random.Generator,
    variance: str = "posterior",
    on_step: Optional[Callable[[int, np.ndarray], None]] = None,
) -> np.ndarray:
    """Run all T reverse steps from ``x_T``; noise comes from ``rng`` in step order."""
    x = np.asarray(x_T)
    for t in range(schedule.T, 0, -1):
        x0_hat = predict_x0(x, t)
        noise = rng.standard_normal(x.shape) if t > 1 else np.zeros_like(x)
        x = ddpm_step(schedule, x, x0_hat, t, noise, variance=variance)
        if on_step is not None:
            on_step(t, x)
    logging.debug(f"Reverse diffusion finished after {schedule.T} steps")
    return x
