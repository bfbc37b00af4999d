"""
Single-level orthonormal Haar wavelet split and real DFT along the frame axis.

All transforms are constant linear maps applied through ``contract_axis`` so
gradients flow through them and round trips stay exact to float precision.
The spectrum of a real signal is carried as a (real, imag) pair of tensors.
"""
from functools import lru_cache
from typing import Tuple

import numpy as np

from . import numcore as nc
from .numcore import Tensor, TensorLike

SQRT_HALF = 1.0 / np.sqrt(2.0)


def dwt_haar(x: TensorLike, axis: int = -3) -> Tuple[Tensor, Tensor, int]:
    """
    Split ``x`` along ``axis`` into (low, high) bands:
    low[k] = (x[2k] + x[2k+1]) / sqrt(2), high[k] = (x[2k] - x[2k+1]) / sqrt(2).

    Odd lengths are padded by repeating the last frame. Returns the bands and
    the original length, which ``idwt_haar`` needs to trim the padding again.
    """
    x = nc.as_tensor(x)
    ax = axis % x.ndim
    length = x.shape[ax]
    if length == 0:
        raise ValueError("dwt_haar: input has zero frames")
    if length % 2:
        x = nc.concat([x, nc.slice_axis(x, ax, length - 1, length)], axis=ax)
    even = nc.slice_axis(x, ax, 0, None, 2)
    odd = nc.slice_axis(x, ax, 1, None, 2)
    return (even + odd) * SQRT_HALF, (even - odd) * SQRT_HALF, length


def idwt_haar(low: TensorLike, high: TensorLike, length: int = None, axis: int = -3) -> Tensor:
    """Exact inverse of ``dwt_haar``; ``length`` trims an odd-length pad."""
    low, high = nc.as_tensor(low), nc.as_tensor(high)
    if low.shape != high.shape:
        raise nc.ShapeMismatchError(f"idwt_haar: band shapes {low.shape} and {high.shape} differ")
    ax = axis % low.ndim
    half = low.shape[ax]
    if half == 0:
        raise ValueError("idwt_haar: bands have zero frames")
    even = (low + high) * SQRT_HALF
    odd = (low - high) * SQRT_HALF
    interleave = _interleave_matrices(half)
    out = nc.contract_axis(interleave[0], even, ax) + nc.contract_axis(interleave[1], odd, ax)
    if length is not None and length != 2 * half:
        if length != 2 * half - 1:
            raise nc.ShapeMismatchError(f"idwt_haar: cannot restore length {length} from {half} coefficient pairs")
        out = nc.slice_axis(out, ax, 0, length)
    return out


@lru_cache(maxsize=64)
def _interleave_matrices(half: int) -> Tuple[np.ndarray, np.ndarray]:
    place_even = np.zeros((2 * half, half))
    place_odd = np.zeros((2 * half, half))
    place_even[0::2, :] = np.eye(half)
    place_odd[1::2, :] = np.eye(half)
    return place_even, place_odd


@lru_cache(maxsize=64)
def dft_matrices(length: int) -> Tuple[np.ndarray, np.ndarray]:
    """Real and imaginary parts of the [L//2+1, L] real-input DFT matrix."""
    if length < 1:
        raise ValueError(f"DFT length must be positive, got {length}")
    forward = np.fft.rfft(np.eye(length), axis=0)
    return forward.real.copy(), forward.imag.copy()


@lru_cache(maxsize=64)
def idft_matrices(length: int) -> Tuple[np.ndarray, np.ndarray]:
    """[L, L//2+1] maps from the real and imaginary spectrum parts back to the signal."""
    if length < 1:
        raise ValueError(f"DFT length must be positive, got {length}")
    bins = length // 2 + 1
    from_real = np.fft.irfft(np.eye(bins), n=length, axis=0)
    from_imag = np.fft.irfft(1j * np.eye(bins), n=length, axis=0)
    return from_real, from_imag


def rfft_frames(x: TensorLike, axis: int = -3) -> Tuple[Tensor, Tensor]:
    """Spectrum of a real signal along ``axis`` as (real, imag), L//2+1 bins."""
    x = nc.as_tensor(x)
    real, imag = dft_matrices(x.shape[axis % x.ndim])
    return nc.contract_axis(real, x, axis), nc.contract_axis(imag, x, axis)


def irfft_frames(real: TensorLike, imag: TensorLike, length: int, axis: int = -3) -> Tensor:
    real, imag = nc.as_tensor(real), nc.as_tensor(imag)
    if real.shape != imag.shape:
        raise nc.ShapeMismatchError(f"irfft_frames: real {real.shape} and imag {imag.shape} parts differ")
    bins = real.shape[axis % real.ndim]
    if bins != length // 2 + 1:
        raise nc.ShapeMismatchError(f"irfft_frames: {bins} bins cannot describe a length-{length} signal")
    from_real, from_imag = idft_matrices(length)
    return nc.contract_axis(from_real, real, axis) + nc.contract_axis(from_imag, imag, axis)
