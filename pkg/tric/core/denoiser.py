"""
The stacked denoiser: each block runs the temporal (TME), spatial (STM) and
frequency (HFA) branches on the token grid, fuses them with score-guided
weights (S-Fus) and injects word features by cross-attention (TIJ).

Token grids are batch-leading [B, N+2, M, D]: rows 0..N-1 are motion frames,
row N the timestep token and row N+1 the CLS token.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import numcore as nc
from .causal import CausalBundle, CausalDisentangler, FUSED_KEY, ccmd_apply
from .layers import Conv1d, FeedForward, GroupNorm, LayerNorm, Linear, Module, MultiHeadAttention
from .motion_repr import (CHANNELS, NORMALIZER_PREFIX, MotionNormalizer, SkeletonGraph, TextBatch, TokenAssembler,
                          default_skeleton, pos_encode_2d, temporal_downsample, temporal_upsample)
from .numcore import Tensor
from .spectral import dwt_haar, idwt_haar, irfft_frames, rfft_frames
from ..utility.utils import AblationConfig, CCMDConfig, ModelConfig

FRAMES, JOINTS = 1, 2
CONTEXT_KERNEL = 3
DEPTHWISE_KERNEL = 3


class TemporalMixingEncoder(Module):
    """Pre-norm transformer encoder layer attending over frames, independently per joint."""

    def __init__(self, dim: int, heads: int, ff_mult: int, rng: np.random.Generator, dtype=nc.DEFAULT_DTYPE):
        self.norm_attn = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.norm_ff = LayerNorm(dim, dtype=dtype)
        self.ff = FeedForward(dim, ff_mult * dim, dim, rng, dtype=dtype)

    def attend(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        per_joint = x.transpose(0, 2, 1, 3)
        normed = self.norm_attn(per_joint)
        attended, weights = self.attn.attend(normed, normed)
        h = per_joint + attended
        h = h + self.ff(self.norm_ff(h))
        return h.transpose(0, 2, 1, 3), weights

    def forward(self, x: Tensor) -> Tensor:
        return self.attend(x)[0]


def tme_forward(x: Tensor, params: TemporalMixingEncoder) -> Tensor:
    return params(x)


class SpatialGraphModule(Module):
    """F_spa = X + stack(LN(GELU(A_hat X W + b))) over the skeleton graph."""

    def __init__(self, dim: int, layers: int, rng: np.random.Generator, dtype=nc.DEFAULT_DTYPE):
        self.gcn = [Linear(dim, dim, rng, dtype=dtype) for _ in range(layers)]
        self.norms = [LayerNorm(dim, dtype=dtype) for _ in range(layers)]

    def forward(self, x: Tensor, a_hat: np.ndarray) -> Tensor:
        a_hat = np.asarray(a_hat)
        if a_hat.shape != (x.shape[JOINTS], x.shape[JOINTS]):
            raise nc.ShapeMismatchError(
                f"stm_forward: adjacency {a_hat.shape} does not match {x.shape[JOINTS]} joints of input {x.shape}")
        h = x
        for layer, norm in zip(self.gcn, self.norms):
            h = norm(nc.gelu(layer(nc.contract_axis(a_hat, h, JOINTS))))
        return x + h


def stm_forward(x: Tensor, a_hat: np.ndarray, params: SpatialGraphModule) -> Tensor:
    return params(x, a_hat)


class LowBandBranch(Module):
    """
    Joint-aware gating of the low band: a context conv along bins yields w_t,
    a context conv along joints yields w_s, and
    S' = S + Linear(S * (sigmoid(w_t) outer sigmoid(w_s))).
    """

    def __init__(self, channels: int, use_joint: bool, rng: np.random.Generator, dtype=nc.DEFAULT_DTYPE):
        self.use_joint = use_joint
        self.context_t = Conv1d(channels, 1, CONTEXT_KERNEL, FRAMES, rng, dtype=dtype)
        self.context_s = Conv1d(channels, 1, CONTEXT_KERNEL, JOINTS, rng, dtype=dtype) if use_joint else None
        self.mix = Linear(channels, channels, rng, dtype=dtype)

    def gate(self, spectrum: Tensor) -> Tensor:
        w_t = nc.sigmoid(self.context_t(nc.mean(spectrum, axis=JOINTS, keepdims=True)))
        if self.context_s is None:
            return w_t
        w_s = nc.sigmoid(self.context_s(nc.mean(spectrum, axis=FRAMES, keepdims=True)))
        return w_t * w_s

    def forward(self, spectrum: Tensor) -> Tensor:
        return spectrum + self.mix(spectrum * self.gate(spectrum))


def low_branch(spectrum: Tensor, params: LowBandBranch) -> Tensor:
    return params(spectrum)


class HighBandBranch(Module):
    """S' = S + GELU(GN(pointwise(depthwise_joint(depthwise_frame(S)))))."""

    def __init__(self, channels: int, groups: int, use_joint: bool, rng: np.random.Generator,
                 dtype=nc.DEFAULT_DTYPE):
        self.depthwise_t = Conv1d(channels, channels, DEPTHWISE_KERNEL, FRAMES, rng, kind="depthwise", dtype=dtype)
        self.depthwise_s = (Conv1d(channels, channels, DEPTHWISE_KERNEL, JOINTS, rng, kind="depthwise", dtype=dtype)
                            if use_joint else None)
        self.pointwise = Conv1d(channels, channels, 1, FRAMES, rng, kind="pointwise", dtype=dtype)
        self.norm = GroupNorm(channels, groups, dtype=dtype)

    def forward(self, band: Tensor) -> Tensor:
        h = self.depthwise_t(band)
        if self.depthwise_s is not None:
            h = self.depthwise_s(h)
        return band + nc.gelu(self.norm(self.pointwise(h)))


def high_branch(band: Tensor, params: HighBandBranch) -> Tensor:
    return params(band)


class FrequencyModule(Module):
    """Haar split along frames, gated spectrum of the low band, depthwise refinement of the high band."""

    def __init__(self, dim: int, groups: int, rng: np.random.Generator, use_fft: bool = True,
                 use_joint: bool = True, use_high: bool = True, dtype=nc.DEFAULT_DTYPE):
        self.use_fft = use_fft
        self.low = LowBandBranch(2 * dim if use_fft else dim, use_joint, rng, dtype=dtype)
        self.high = HighBandBranch(dim, groups, use_joint, rng, dtype=dtype) if use_high else None

    def bands(self, x: Tensor) -> Tuple[Tensor, Tensor, int]:
        """Processed (low, high) Haar bands before reconstruction."""
        low, high, length = dwt_haar(x, axis=FRAMES)
        if self.use_fft:
            half = low.shape[FRAMES]
            real, imag = rfft_frames(low, axis=FRAMES)
            spectrum = self.low(nc.concat([real, imag], axis=-1))
            width = low.shape[-1]
            low = irfft_frames(nc.slice_axis(spectrum, -1, 0, width), nc.slice_axis(spectrum, -1, width, 2 * width),
                               half, axis=FRAMES)
        else:
            low = self.low(low)
        if self.high is not None:
            high = self.high(high)
        return low, high, length

    def forward(self, x: Tensor) -> Tensor:
        low, high, length = self.bands(x)
        return idwt_haar(low, high, length, axis=FRAMES)


def hfa_forward(x: Tensor, params: FrequencyModule) -> Tensor:
    return params(x)


def fusion_weights(logits_mot: Tensor, logits_sem: Tensor) -> Tensor:
    """Softmax over the domain axis of the summed motion and semantic logits."""
    return nc.softmax(logits_mot + logits_sem, axis=-1)


class ScoreFusion(Module):
    """
    Score-guided fusion of k domain features. With ``mode="concat"`` the
    domains are concatenated with X and mapped back to D instead.
    """

    def __init__(self, dim: int, domains: int, rng: np.random.Generator, mode: str = "sfus",
                 dtype=nc.DEFAULT_DTYPE):
        if mode not in ("sfus", "concat"):
            raise ValueError(f"Unknown fusion mode '{mode}'")
        self.mode = mode
        self.domains = domains
        if mode == "sfus":
            self.f_mot = FeedForward(domains * dim, dim, domains, rng, dtype=dtype)
            self.f_sem = FeedForward(2 * dim, dim, 1, rng, dtype=dtype)
            self.out = Linear(2 * dim, dim, rng, dtype=dtype)
        else:
            self.out = Linear((domains + 1) * dim, dim, rng, dtype=dtype)

    def forward(self, features: Sequence[Tensor], x: Tensor, cls_token: Tensor) -> Tuple[Tensor, Optional[Tensor]]:
        if len(features) != self.domains:
            raise nc.ShapeMismatchError(f"sfus_forward expects {self.domains} domain tensors, got {len(features)}")
        for f in features:
            if f.shape != x.shape:
                raise nc.ShapeMismatchError(f"sfus_forward: domain feature {f.shape} does not match input {x.shape}")
        if self.mode == "concat":
            return self.out(nc.concat([x] + list(features), axis=-1)), None

        batch, rows, joints, dim = x.shape
        cls_grid = nc.broadcast_to(cls_token.reshape(batch, 1, 1, dim), x.shape)
        logits_mot = self.f_mot(nc.concat(list(features), axis=-1))
        logits_sem = nc.concat([self.f_sem(nc.concat([f, cls_grid], axis=-1)) for f in features], axis=-1)
        alpha = fusion_weights(logits_mot, logits_sem)
        fused = None
        for i, f in enumerate(features):
            term = nc.slice_axis(alpha, -1, i, i + 1) * f
            fused = term if fused is None else fused + term
        return self.out(nc.concat([x, fused], axis=-1)), alpha


def sfus_forward(f_temp: Tensor, f_spa: Tensor, f_freq: Tensor, x: Tensor, cls_token: Tensor,
                 params: ScoreFusion) -> Tuple[Tensor, Optional[Tensor]]:
    return params([f_temp, f_spa, f_freq], x, cls_token)


class TextInjection(Module):
    """Cross-attention from every grid position to the word features, with a residual."""

    def __init__(self, dim: int, d_text: int, heads: int, rng: np.random.Generator, dtype=nc.DEFAULT_DTYPE):
        self.attn = MultiHeadAttention(dim, heads, rng, dim_kv=d_text, dtype=dtype)

    def attend(self, y: Tensor, tau: Tensor, mask: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
        if tau.ndim != 3 or tau.shape[1] == 0 or (mask is not None and not np.all(np.any(mask, axis=-1))):
            raise ValueError(f"tij_forward needs at least one word feature per item, got tau {tau.shape}")
        batch, rows, joints, dim = y.shape
        queries = y.reshape(batch, rows * joints, dim)
        injected, weights = self.attn.attend(queries, tau, mask)
        return y + injected.reshape(y.shape), weights

    def forward(self, y: Tensor, tau: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        return self.attend(y, tau, mask)[0]


def tij_forward(y: Tensor, tau: Tensor, params: TextInjection, mask: Optional[np.ndarray] = None) -> Tensor:
    return params(y, nc.as_tensor(tau), mask)


class DenoiserBlock(Module):
    def __init__(self, model: ModelConfig, ablation: AblationConfig, rng: np.random.Generator,
                 dtype=nc.DEFAULT_DTYPE):
        dim = model.D
        self.domains = tuple(ablation.domains)
        self.tme = TemporalMixingEncoder(dim, model.heads, model.ff_mult, rng, dtype=dtype)
        self.stm = SpatialGraphModule(dim, model.gcn_layers, rng, dtype=dtype) if "spa" in self.domains else None
        self.hfa = (FrequencyModule(dim, model.gn_groups, rng, use_fft=ablation.hfa_fft, use_joint=ablation.hfa_joint,
                                    use_high=ablation.hfa_high, dtype=dtype)
                    if "freq" in self.domains else None)
        self.fusion = ScoreFusion(dim, len(self.domains), rng, mode=ablation.fusion, dtype=dtype)
        self.tij = TextInjection(dim, model.d_text, model.heads, rng, dtype=dtype)

    def branches(self, x: Tensor, a_hat: np.ndarray) -> Dict[str, Tensor]:
        features = {"temp": self.tme(x)}
        if self.stm is not None:
            features["spa"] = self.stm(x, a_hat)
        if self.hfa is not None:
            features["freq"] = self.hfa(x)
        return {domain: features[domain] for domain in self.domains}


@dataclass
class DenoiserOutput:
    x0_hat: Tensor
    bundle: Optional[CausalBundle] = None
    alphas: List[Optional[Tensor]] = field(default_factory=list)


class Denoiser(Module):
    """
    All learnable state: input projection, token assembler, J blocks, output
    head, learned null condition and the optional training-only CCMD. The
    corpus normalizer is not learned but travels with the state dict.
    """

    def __init__(self, model: ModelConfig, ablation: AblationConfig, ccmd: CCMDConfig, n_raw: int, seed: int,
                 skeleton: Optional[SkeletonGraph] = None, dtype=nc.DEFAULT_DTYPE):
        if model.J < 1:
            raise ValueError(f"Denoiser needs at least one block, got J={model.J}")
        if model.D % 4:
            raise ValueError(f"Feature width D must be divisible by 4, got {model.D}")
        self.model = model
        self.n_raw = n_raw
        self.frames = -(-n_raw // model.s)
        self.skeleton = skeleton or default_skeleton(model.M)
        if self.skeleton.M != model.M:
            raise nc.ShapeMismatchError(f"Skeleton has {self.skeleton.M} joints, model expects M={model.M}")
        self.pos_encoding = pos_encode_2d(self.frames, model.M, model.D).astype(dtype)

        rng = np.random.default_rng(seed)
        self.input_proj = Linear(CHANNELS, model.D, rng, dtype=dtype)
        self.assembler = TokenAssembler(model.D, model.d_text, rng, dtype=dtype)
        self.blocks = [DenoiserBlock(model, ablation, rng, dtype=dtype) for _ in range(model.J)]
        self.head = Linear(model.D, CHANNELS, rng, dtype=dtype)
        self.null_cls = Tensor(rng.standard_normal(model.d_text).astype(dtype) * 0.02, requires_grad=True)
        self.null_tau = Tensor(rng.standard_normal((1, model.d_text)).astype(dtype) * 0.02, requires_grad=True)
        self.normalizer = MotionNormalizer.identity(model.M)

        self.ccmd = None
        if ccmd.enabled:
            # Separate stream so the main weights do not depend on the CCMD switch.
            ccmd_rng = np.random.default_rng([seed, 1])
            self.ccmd = CausalDisentangler(model.D, model.J, ccmd.domains, ccmd.placement, ccmd.reduction,
                                           model.s, n_raw, ccmd_rng, dtype=dtype)
        logging.debug(f"Denoiser built: J={model.J}, D={model.D}, M={model.M}, N={self.frames}, "
                      f"{self.num_parameters()} parameters")

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = super().state_dict()
        state.update(self.normalizer.state_dict())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = {k: v for k, v in state.items() if not k.startswith(NORMALIZER_PREFIX)}
        stats = {k: v for k, v in state.items() if k.startswith(NORMALIZER_PREFIX)}
        normalizer = MotionNormalizer.from_state(stats) if stats else MotionNormalizer.identity(self.model.M)
        if normalizer.mean.shape != (self.model.M, CHANNELS):
            raise nc.ShapeMismatchError(f"Normalizer statistics {normalizer.mean.shape} do not fit M={self.model.M}")
        super().load_state_dict(params)
        self.normalizer = normalizer

    def denoiser_parameters(self) -> List[Tensor]:
        """Parameters used at inference (everything except CCMD)."""
        return [p for name, p in self.named_parameters() if not name.startswith("ccmd.")]

    def _condition(self, text: TextBatch, dtype) -> Tuple[Tensor, Tensor, np.ndarray]:
        null = text.null.astype(dtype)
        keep = 1.0 - null
        cls = nc.Tensor(text.cls.astype(dtype) * keep[:, None]) + self.null_cls * null[:, None]
        words = text.tau.shape[1]
        null_words = nc.pad_axis(self.null_tau.reshape(1, 1, self.model.d_text), 1, 0, words - 1)
        tau = nc.Tensor(text.tau.astype(dtype) * keep[:, None, None]) + null_words * null[:, None, None]
        mask = np.where(text.null[:, None], np.arange(words)[None, :] == 0, text.mask)
        return cls, tau, mask

    def forward(self, x_t, t, text: TextBatch, mode: str = "inference") -> DenoiserOutput:
        """
        Predict x0 from x_t [B, N_raw, M, 12] (or a single [N_raw, M, 12]).
        In train mode with CCMD enabled the output carries the causal bundle.
        """
        x_t = nc.as_tensor(x_t)
        single = x_t.ndim == 3
        if single:
            x_t = x_t.reshape((1,) + x_t.shape)
        batch, n_raw, joints, channels = x_t.shape
        if (n_raw, joints, channels) != (self.n_raw, self.model.M, CHANNELS):
            raise nc.ShapeMismatchError(
                f"denoiser_forward: input {x_t.shape} does not match [B, {self.n_raw}, {self.model.M}, {CHANNELS}]")
        if len(text) != batch:
            raise nc.ShapeMismatchError(f"denoiser_forward: {len(text)} text conditions for a batch of {batch}")
        steps = np.broadcast_to(np.asarray(t), (batch,))
        dtype = self.head.weight.dtype

        motion = self.input_proj(temporal_downsample(x_t, self.model.s)) + self.pos_encoding
        cls, tau, mask = self._condition(text, dtype)
        x = self.assembler(motion, steps, cls)
        cls_token = self.assembler.cls_proj(cls)

        use_ccmd = self.ccmd is not None and mode == "train"
        bundle = CausalBundle() if use_ccmd else None
        alphas = []
        for j, block in enumerate(self.blocks):
            features = block.branches(x, self.skeleton.A_hat)
            if use_ccmd and self.ccmd.placement == "pre":
                features, layer_out = ccmd_apply(features, self.ccmd, j, self.frames, mode)
                bundle.layers.append(layer_out)
            y, alpha = block.fusion(list(features.values()), x, cls_token)
            if use_ccmd and self.ccmd.placement == "post":
                _, layer_out = ccmd_apply({FUSED_KEY: y}, self.ccmd, j, self.frames, mode)
                bundle.layers.append(layer_out)
            alphas.append(alpha)
            x = block.tij(y, tau, mask)

        x0_hat = temporal_upsample(self.head(nc.slice_axis(x, FRAMES, 0, self.frames)), self.model.s, self.n_raw)
        if single:
            x0_hat = x0_hat.reshape(x0_hat.shape[1:])
        return DenoiserOutput(x0_hat=x0_hat, bundle=bundle, alphas=alphas)


def denoiser_forward(x_t, t, cond: TextBatch, state: Denoiser, mode: str = "inference") -> DenoiserOutput:
    return state(x_t, t, cond, mode=mode)
