"""
Training losses: reconstruction, layer-weighted causal loss on the decoded
interventions, and a perceptual loss in the space of a frozen motion encoder.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import numcore as nc
from .causal import CausalBundle
from .motion_repr import CHANNELS
from .numcore import Tensor, TensorLike
from ..utility.constant import DEFAULT_LAMBDA_FCF, DEFAULT_LAMBDA_P, PERCEPTUAL_DIM, PERCEPTUAL_SEED

Scalar = Union[Tensor, float]


class NonFiniteLossError(FloatingPointError):
    """Raised when a training loss evaluates to NaN or infinity."""


@dataclass(frozen=True)
class LossWeights:
    lambda_fcf: float = DEFAULT_LAMBDA_FCF
    lambda_p: float = DEFAULT_LAMBDA_P
    w_layers: Tuple[float, ...] = ()

    def __post_init__(self):
        negative = [w for w in (self.lambda_fcf, self.lambda_p) + tuple(self.w_layers) if w < 0]
        if negative:
            raise ValueError(f"Loss weights must be non-negative, got {negative}")


class PerceptualEncoder:
    """
    Frozen random motion encoder: two temporal convolutions over the
    flattened joint channels, GELU after each, mean pooled over frames and
    scaled by 1/sqrt(dim) so a squared distance is a per-feature mean.
    Its tensors never require gradients.
    """

    def __init__(self, joints: int, dim: int = PERCEPTUAL_DIM, seed: int = PERCEPTUAL_SEED,
                 kernel: int = 3, dtype=nc.DEFAULT_DTYPE):
        rng = np.random.default_rng(seed)
        width = joints * CHANNELS
        self.joints = joints
        self.dim = dim
        self.conv1 = _frozen(rng, (kernel, width, dim), kernel * width, dtype)
        self.conv2 = _frozen(rng, (kernel, dim, dim), kernel * dim, dtype)
        self.bias1 = Tensor(np.zeros(dim, dtype=dtype))
        self.bias2 = Tensor(np.zeros(dim, dtype=dtype))

    def __call__(self, motion: TensorLike) -> Tensor:
        motion = nc.as_tensor(motion)
        if motion.ndim == 3:
            motion = motion.reshape((1,) + motion.shape)
        batch, frames, joints, channels = motion.shape
        if (joints, channels) != (self.joints, CHANNELS):
            raise nc.ShapeMismatchError(
                f"PerceptualEncoder expects [B, N, {self.joints}, {CHANNELS}], got {motion.shape}")
        flat = motion.reshape(batch, frames, joints * channels)
        h = nc.gelu(nc.conv1d(flat, self.conv1, self.bias1, axis=1))
        h = nc.gelu(nc.conv1d(h, self.conv2, self.bias2, axis=1))
        return nc.mean(h, axis=1) * (1.0 / np.sqrt(self.dim))

    def embed(self, motions: np.ndarray) -> np.ndarray:
        """Embeddings of a motion batch as a plain array, without recording a tape."""
        with nc.no_grad():
            return self(np.asarray(motions, dtype=self.conv1.dtype)).data.copy()


def _frozen(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=False)


def loss_simple(x0: TensorLike, x0_hat: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    x0_hat = nc.as_tensor(x0_hat)
    return nc.mse(x0_hat, x0)


def loss_fcf(bundle: Optional[CausalBundle], x0: TensorLike, w_layers: Sequence[float]) -> Scalar:
    """sum_j w_j MSE(TDE_j, x0); zero without a bundle."""
    if bundle is None:
        return 0.0
    if len(bundle) != len(w_layers):
        raise ValueError(f"loss_fcf: {len(w_layers)} layer weights for {len(bundle)} layers")
    total: Scalar = 0.0
    for weight, tde in zip(w_layers, bundle.tde):
        if weight == 0:
            continue
        term = nc.mse(tde, x0) * float(weight)
        total = term if isinstance(total, float) else total + term
    return total


def loss_perceptual(x0: TensorLike, x0_hat: TensorLike, encoder: PerceptualEncoder) -> Tensor:
    """Squared L2 distance of the encodings, averaged over batch items."""
    diff = encoder(x0_hat) - encoder(x0)
    return nc.mean(nc.tsum(diff * diff, axis=-1))


@dataclass
class LossParts:
    simple: Scalar
    fcf: Scalar = 0.0
    p: Scalar = 0.0


def loss_total(parts, weights: LossWeights = LossWeights()) -> Scalar:
    """
    L_simple + lambda_fcf L_fcf + lambda_p L_p. Terms with a zero weight are
    left out entirely so they contribute no gradient.
    """
    if not isinstance(parts, LossParts):
        parts = LossParts(*parts)
    if weights.lambda_fcf < 0 or weights.lambda_p < 0:
        raise ValueError(f"Loss weights must be non-negative, got {weights.lambda_fcf}, {weights.lambda_p}")
    total = parts.simple
    if weights.lambda_fcf > 0:
        total = total + weights.lambda_fcf * parts.fcf
    if weights.lambda_p > 0:
        total = total + weights.lambda_p * parts.p
    return total


def scalar_value(value: Scalar) -> float:
    return float(value.data) if isinstance(value, Tensor) else float(value)
