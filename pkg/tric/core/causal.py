"""
Training-only counterfactual disentangler.

For every enabled domain feature F of a block, two symmetric gate extractors
produce factual (E) and counterfactual (C) components, a shared linear map
forms the intervention F~ = W_do E - W_do C, and a per-layer head decodes the
concatenated interventions to a motion prediction for the causal loss. The
features handed to fusion are never modified.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import numcore as nc
from .layers import Linear, Module
from .motion_repr import CHANNELS, temporal_upsample
from .numcore import Tensor

PLACEMENTS = ("pre", "post")
FUSED_KEY = "fused"
MODES = ("train", "inference")


class GateExtractor(Module):
    """omega = Sigmoid(Linear(ReLU(Linear(AvgPool(F) + MaxPool(F))))); result = Linear(omega * F) * F."""

    def __init__(self, dim: int, reduction: int, rng: np.random.Generator, dtype=nc.DEFAULT_DTYPE):
        hidden = max(dim // reduction, 1)
        self.squeeze = Linear(dim, hidden, rng, dtype=dtype)
        self.excite = Linear(hidden, dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)

    def gate(self, features: Tensor) -> Tensor:
        pool_axes = tuple(range(1, features.ndim - 1))
        pooled = nc.avg_pool(features, pool_axes) + nc.max_pool(features, pool_axes)
        return nc.sigmoid(self.excite(nc.relu(self.squeeze(pooled))))

    def forward(self, features: Tensor) -> Tensor:
        return self.proj(self.gate(features) * features) * features


class DomainDisentangler(Module):
    def __init__(self, dim: int, reduction: int, rng: np.random.Generator, dtype=nc.DEFAULT_DTYPE):
        self.factual = GateExtractor(dim, reduction, rng, dtype=dtype)
        self.counterfactual = GateExtractor(dim, reduction, rng, dtype=dtype)
        self.w_do = Linear(dim, dim, rng, bias=False, dtype=dtype)

    def forward(self, features: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        factual = gate_extract(features, self, "factual")
        counterfactual = gate_extract(features, self, "counterfactual")
        return factual, counterfactual, intervene(factual, counterfactual, self.w_do)


def gate_extract(features: Tensor, params: DomainDisentangler, which: str = "factual") -> Tensor:
    if which not in ("factual", "counterfactual"):
        raise ValueError(f"Unknown extractor '{which}', expected factual or counterfactual")
    return getattr(params, which)(features)


def intervene(factual: Tensor, counterfactual: Tensor, w_do: Linear) -> Tensor:
    """W_do E - W_do C, with W_do acting on the channel axis."""
    if factual.shape != counterfactual.shape:
        raise nc.ShapeMismatchError(
            f"intervene: factual {factual.shape} and counterfactual {counterfactual.shape} differ")
    return w_do(factual) - w_do(counterfactual)


def decode_tde(intervened: Dict[str, Tensor], head: Linear, n_motion: int, s: int, n_raw: int) -> Tensor:
    """Concatenate the intervened domains, map to 12 channels, drop the conditioning rows and upsample."""
    if not intervened:
        raise ValueError("decode_tde needs at least one enabled domain")
    stacked = nc.concat(list(intervened.values()), axis=-1)
    decoded = head(stacked)
    return temporal_upsample(nc.slice_axis(decoded, -3, 0, n_motion), s, n_raw)


@dataclass
class CausalLayerOutput:
    factual: Dict[str, Tensor] = field(default_factory=dict)
    counterfactual: Dict[str, Tensor] = field(default_factory=dict)
    intervened: Dict[str, Tensor] = field(default_factory=dict)
    tde: Optional[Tensor] = None


@dataclass
class CausalBundle:
    layers: List[CausalLayerOutput] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def tde(self) -> List[Tensor]:
        return [layer.tde for layer in self.layers]


class CausalLayer(Module):
    def __init__(self, dim: int, domains: Sequence[str], reduction: int, rng: np.random.Generator,
                 dtype=nc.DEFAULT_DTYPE):
        self.branches = {domain: DomainDisentangler(dim, reduction, rng, dtype=dtype) for domain in domains}
        self.tde_head = Linear(len(domains) * dim, CHANNELS, rng, dtype=dtype)


class CausalDisentangler(Module):
    """
    One ``CausalLayer`` per denoiser block. With placement "pre" each enabled
    domain feature gets its own branch; with "post" a single branch acts on
    the fused block output.
    """

    def __init__(self, dim: int, layers: int, domains: Sequence[str], placement: str, reduction: int,
                 s: int, n_raw: int, rng: np.random.Generator, dtype=nc.DEFAULT_DTYPE):
        if placement not in PLACEMENTS:
            raise ValueError(f"Invalid CCMD placement '{placement}', expected one of {PLACEMENTS}")
        if placement == "pre" and not domains:
            raise ValueError("CCMD with placement 'pre' needs at least one domain")
        self.placement = placement
        self.domains = tuple(domains) if placement == "pre" else (FUSED_KEY,)
        self.s = s
        self.n_raw = n_raw
        self.layers = [CausalLayer(dim, self.domains, reduction, rng, dtype=dtype) for _ in range(layers)]


def ccmd_apply(
    features: Dict[str, Tensor],
    params: CausalDisentangler,
    layer: int,
    n_motion: int,
    mode: str = "train",
) -> Tuple[Dict[str, Tensor], Optional[CausalLayerOutput]]:
    """
    Branch the causal machinery off ``features``. The returned features are
    the inputs themselves; the layer output is None in inference mode.
    """
    if mode not in MODES:
        raise ValueError(f"Unknown CCMD mode '{mode}', expected one of {MODES}")
    if mode == "inference":
        return features, None
    causal_layer = params.layers[layer]
    out = CausalLayerOutput()
    for domain, branch in causal_layer.branches.items():
        if domain not in features:
            raise KeyError(f"CCMD domain '{domain}' missing from block features {sorted(features)}")
        e, c, f_tilde = branch(features[domain])
        out.factual[domain] = e
        out.counterfactual[domain] = c
        out.intervened[domain] = f_tilde
    out.tde = decode_tde(out.intervened, causal_layer.tde_head, n_motion, params.s, params.n_raw)
    return features, out
