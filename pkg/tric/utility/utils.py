import os
import logging
from dataclasses import dataclass, field, fields
from typing import Dict, Iterable, List, Optional, Set, Tuple, get_type_hints

from .constant import (
    DEFAULT_LAYERS, DEFAULT_DIM, DEFAULT_JOINTS, DEFAULT_RAW_FRAMES, DEFAULT_DOWNSAMPLE, DEFAULT_HEADS,
    DEFAULT_TEXT_DIM, DEFAULT_FF_MULT, DEFAULT_GN_GROUPS, DEFAULT_GCN_LAYERS,
    DEFAULT_DIFFUSION_STEPS, DEFAULT_GUIDANCE_SCALE, DEFAULT_COND_DROPOUT, DEFAULT_SAMPLING_VARIANCE,
    DEFAULT_LAMBDA_FCF, DEFAULT_LAMBDA_P, FOUR_LAYER_WEIGHTS, DEFAULT_CCMD_REDUCTION, DOMAINS,
    DEFAULT_LR, DEFAULT_BETAS, DEFAULT_EPS, DEFAULT_WEIGHT_DECAY, DEFAULT_BATCH, FULL_SCALE_BATCH, DEFAULT_ITERS,
    DEFAULT_LOG_EVERY, DEFAULT_CHECKPOINT_EVERY, DEFAULT_SEED, DEFAULT_CORPUS_SIZE, DEFAULT_NORMALIZE,
    DEFAULT_REPEATS, RETRIEVAL_POOL, DIVERSITY_PAIRS, DEFAULT_LOG_LEVEL, DEFAULT_EVAL_WORKERS, MAX_EVAL_WORKERS,
    DEFAULT_SELFTEST_TRIALS, MAX_SELFTEST_TRIALS,
)


class ConfigError(ValueError):
    """Unknown keys, unparseable values or invalid combinations in a run configuration."""


class CheckpointMismatchError(ValueError):
    """A checkpoint was written for a different model structure than the runtime configuration."""


@dataclass
class ModelConfig:
    """Denoiser structure."""
    J: int = DEFAULT_LAYERS
    D: int = DEFAULT_DIM
    M: int = DEFAULT_JOINTS
    s: int = DEFAULT_DOWNSAMPLE
    heads: int = DEFAULT_HEADS
    d_text: int = DEFAULT_TEXT_DIM
    ff_mult: int = DEFAULT_FF_MULT
    gn_groups: int = DEFAULT_GN_GROUPS
    gcn_layers: int = DEFAULT_GCN_LAYERS


@dataclass
class DiffusionConfig:
    T: int = DEFAULT_DIFFUSION_STEPS
    guidance_scale: float = DEFAULT_GUIDANCE_SCALE
    cond_dropout: float = DEFAULT_COND_DROPOUT
    sampling_variance: str = DEFAULT_SAMPLING_VARIANCE


@dataclass
class LossConfig:
    lambda_fcf: float = DEFAULT_LAMBDA_FCF
    lambda_p: float = DEFAULT_LAMBDA_P
    layer_weights: Optional[Tuple[float, ...]] = None  # None means "auto"


@dataclass
class CCMDConfig:
    enabled: bool = True
    placement: str = "pre"
    domains: Tuple[str, ...] = DOMAINS
    reduction: int = DEFAULT_CCMD_REDUCTION


@dataclass
class AblationConfig:
    """Structural switches for the domain and HFA ablations."""
    domains: Tuple[str, ...] = DOMAINS
    fusion: str = "sfus"  # "sfus" or "concat"
    hfa_fft: bool = True
    hfa_joint: bool = True
    hfa_high: bool = True


@dataclass
class OptimConfig:
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETAS[0]
    beta2: float = DEFAULT_BETAS[1]
    eps: float = DEFAULT_EPS
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    batch: int = DEFAULT_BATCH
    iters: int = DEFAULT_ITERS
    log_every: int = DEFAULT_LOG_EVERY
    checkpoint_every: int = DEFAULT_CHECKPOINT_EVERY
    dtype: str = "float64"


@dataclass
class DataConfig:
    seed: int = DEFAULT_SEED
    corpus_size: int = DEFAULT_CORPUS_SIZE
    n_raw: int = DEFAULT_RAW_FRAMES
    normalize: bool = DEFAULT_NORMALIZE


@dataclass
class EvalConfig:
    repeats: int = DEFAULT_REPEATS
    pool: int = RETRIEVAL_POOL
    diversity_pairs: int = DIVERSITY_PAIRS


@dataclass
class PathConfig:
    out_dir: str = "runs/tric"
    corpus: str = ""
    skeleton: str = ""


SECTIONS = {
    "model": ModelConfig,
    "diffusion": DiffusionConfig,
    "loss": LossConfig,
    "ccmd": CCMDConfig,
    "ablation": AblationConfig,
    "optim": OptimConfig,
    "data": DataConfig,
    "eval": EvalConfig,
    "path": PathConfig,
}

STRUCTURAL_PREFIXES = ("model.", "ablation.", "ccmd.")
STRUCTURAL_KEYS = ("data.n_raw",)

PRESETS: Dict[str, Dict[str, str]] = {
    "desk": {},
    "base": {"model.J": "4", "model.D": "256", "model.heads": "8", "model.s": "7",
             "optim.batch": str(FULL_SCALE_BATCH)},
    "large": {"model.J": "4", "model.D": "256", "model.heads": "8", "model.s": "4",
              "optim.batch": str(FULL_SCALE_BATCH)},
}

ABLATION_VARIANTS: Dict[str, Dict[str, str]] = {
    "full": {},
    "tme": {"ablation.domains": "temp", "ablation.fusion": "concat"},
    "tme+stm": {"ablation.domains": "temp,spa", "ablation.fusion": "concat", "ccmd.domains": "temp,spa"},
    "tme+hfa": {"ablation.domains": "temp,freq", "ablation.fusion": "concat", "ccmd.domains": "temp,freq"},
    "tme+stm+hfa": {"ablation.fusion": "concat"},
    "wo_hfa": {"ablation.domains": "temp,spa", "ccmd.domains": "temp,spa"},
    "wo_fft": {"ablation.hfa_fft": "false"},
    "wo_joint": {"ablation.hfa_joint": "false"},
    "wo_high": {"ablation.hfa_high": "false"},
    "wo_ccmd": {"ccmd.enabled": "false"},
    "ccmd_post": {"ccmd.placement": "post"},
    "ccmd_temp": {"ccmd.domains": "temp"},
    "ccmd_temp_spa": {"ccmd.domains": "temp,spa"},
    "weights_last": {"model.J": "4", "loss.layer_weights": "0,0,0,1"},
    "weights_uniform": {"model.J": "4", "loss.layer_weights": "0.25,0.25,0.25,0.25"},
    "weights_increasing": {"model.J": "4", "loss.layer_weights": "0.1,0.2,0.3,0.4"},
    "wo_lp": {"loss.lambda_p": "0"},
    "sens_fcf_0.5": {"loss.lambda_fcf": "0.5"},
    "sens_fcf_2": {"loss.lambda_fcf": "2"},
    "sens_p_1": {"loss.lambda_p": "1"},
    "sens_p_20": {"loss.lambda_p": "20"},
}

_TRUE = ("true", "yes", "1", "on")
_FALSE = ("false", "no", "0", "off")


@dataclass
class RunConfig:
    """Complete configuration of a run; every key has a default."""
    model: ModelConfig = field(default_factory=ModelConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    ccmd: CCMDConfig = field(default_factory=CCMDConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    path: PathConfig = field(default_factory=PathConfig)
    seed: int = DEFAULT_SEED
    explicit_keys: Set[str] = field(default_factory=set, repr=False, compare=False)

    @property
    def layer_weights(self) -> Tuple[float, ...]:
        if self.loss.layer_weights is None:
            return default_layer_weights(self.model.J)
        return self.loss.layer_weights

    def flatten(self) -> List[Tuple[str, str]]:
        """All keys in a stable order, formatted as they would appear in a config file."""
        pairs = []
        for section in SECTIONS:
            block = getattr(self, section)
            for f in fields(block):
                pairs.append((f"{section}.{f.name}", _format_value(getattr(block, f.name))))
        pairs.append(("seed", str(self.seed)))
        return pairs

    def structural(self) -> Dict[str, str]:
        return {key: value for key, value in self.flatten()
                if key.startswith(STRUCTURAL_PREFIXES) or key in STRUCTURAL_KEYS}


def default_layer_weights(layers: int) -> Tuple[float, ...]:
    """{0.1, 0.2, 0.3, 0.4} for four layers, otherwise j / sum(j)."""
    if layers == len(FOUR_LAYER_WEIGHTS):
        return FOUR_LAYER_WEIGHTS
    total = layers * (layers + 1) / 2
    return tuple((j + 1) / total for j in range(layers))


def _format_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key: str, raw: str, hint):
    raw = raw.strip()
    try:
        if hint is bool:
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        if hint == Tuple[str, ...]:
            return tuple(item.strip() for item in raw.split(",") if item.strip())
        if hint in (Tuple[float, ...], Optional[Tuple[float, ...]]):
            if raw.lower() == "auto":
                return None
            return tuple(float(item) for item in raw.split(",") if item.strip())
    except ValueError:
        raise ConfigError(f"Cannot parse value '{raw}' for key '{key}'") from None
    raise ConfigError(f"Key '{key}' has an unsupported type {hint}")


def parse_config_lines(lines: Iterable[str]) -> List[Tuple[str, str]]:
    """`key = value` lines; `#` starts a comment; blank lines are skipped."""
    pairs = []
    for number, line in enumerate(lines, start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"Line {number} is not a 'key = value' pair: {line.rstrip()!r}")
        key, value = content.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def build_config(pairs: Iterable[Tuple[str, str]]) -> RunConfig:
    """
    Build a validated RunConfig from (key, value) pairs.

    `preset` and `variant` are expanded first; explicitly given keys override
    them. Unknown keys raise ConfigError.
    """
    explicit: Dict[str, str] = {}
    preset, variant = "desk", "full"
    for key, value in pairs:
        if key == "preset":
            preset = value
        elif key == "variant":
            variant = value
        else:
            explicit[key] = value
    if preset not in PRESETS:
        raise ConfigError(f"Unknown preset '{preset}', expected one of {sorted(PRESETS)}")
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"Unknown ablation variant '{variant}', expected one of {sorted(ABLATION_VARIANTS)}")

    merged = dict(PRESETS[preset])
    merged.update(ABLATION_VARIANTS[variant])
    merged.update(explicit)

    config = RunConfig()
    for key, raw in merged.items():
        _assign(config, key, raw)
    config.explicit_keys = set(merged)
    _reconcile_ccmd_domains(config)
    validate_config(config)
    return config


def _assign(config: RunConfig, key: str, raw: str):
    if key == "seed":
        config.seed = _parse_value(key, raw, int)
        return
    section, _, name = key.partition(".")
    if section not in SECTIONS or not name:
        raise ConfigError(f"Unknown config key '{key}'")
    block = getattr(config, section)
    hints = get_type_hints(type(block))
    if name not in hints:
        raise ConfigError(f"Unknown config key '{key}'")
    setattr(block, name, _parse_value(key, raw, hints[name]))


def _reconcile_ccmd_domains(config: RunConfig):
    model_domains = config.ablation.domains
    if "ccmd.domains" in config.explicit_keys:
        outside = [d for d in config.ccmd.domains if d not in model_domains]
        if outside:
            raise ConfigError(f"CCMD domains {outside} are not enabled in ablation.domains={list(model_domains)}")
    else:
        config.ccmd.domains = tuple(d for d in config.ccmd.domains if d in model_domains)


def validate_config(config: RunConfig):
    m, d, lo = config.model, config.diffusion, config.loss
    problems = []
    if m.J < 1:
        problems.append(f"model.J must be >= 1, got {m.J}")
    if m.D < 4 or m.D % 4:
        problems.append(f"model.D must be a positive multiple of 4, got {m.D}")
    if m.heads < 1 or m.D % m.heads:
        problems.append(f"model.D={m.D} is not divisible by model.heads={m.heads}")
    if m.gn_groups < 1 or m.D % m.gn_groups:
        problems.append(f"model.D={m.D} is not divisible by model.gn_groups={m.gn_groups}")
    if m.M < 1 or m.s < 1 or m.d_text < 1 or m.gcn_layers < 1 or m.ff_mult < 1:
        problems.append("model.M, model.s, model.d_text, model.gcn_layers and model.ff_mult must be >= 1")
    if d.T < 1:
        problems.append(f"diffusion.T must be >= 1, got {d.T}")
    if d.guidance_scale < 0:
        problems.append(f"diffusion.guidance_scale must be >= 0, got {d.guidance_scale}")
    if not 0.0 <= d.cond_dropout < 1.0:
        problems.append(f"diffusion.cond_dropout must lie in [0, 1), got {d.cond_dropout}")
    if d.sampling_variance not in ("posterior", "beta"):
        problems.append(f"diffusion.sampling_variance must be posterior or beta, got '{d.sampling_variance}'")
    if lo.lambda_fcf < 0 or lo.lambda_p < 0:
        problems.append(f"loss weights must be >= 0, got lambda_fcf={lo.lambda_fcf}, lambda_p={lo.lambda_p}")
    weights = config.layer_weights
    if len(weights) != m.J or any(w < 0 for w in weights):
        problems.append(f"loss.layer_weights {list(weights)} must hold {m.J} non-negative values")
    a, c = config.ablation, config.ccmd
    unknown = [x for x in a.domains + c.domains if x not in DOMAINS]
    if unknown or not a.domains:
        problems.append(f"domains must be a non-empty subset of {list(DOMAINS)}, got unknown {unknown}")
    if "temp" not in a.domains:
        problems.append("ablation.domains must keep the temporal branch")
    if a.fusion not in ("sfus", "concat"):
        problems.append(f"ablation.fusion must be sfus or concat, got '{a.fusion}'")
    if c.placement not in ("pre", "post"):
        problems.append(f"ccmd.placement must be pre or post, got '{c.placement}'")
    if c.enabled and c.placement == "pre" and not c.domains:
        problems.append("ccmd is enabled with placement 'pre' but no domain is left")
    if c.reduction < 1:
        problems.append(f"ccmd.reduction must be >= 1, got {c.reduction}")
    o = config.optim
    if o.lr <= 0:
        problems.append(f"optim.lr must be > 0, got {o.lr}")
    if o.batch < 1 or o.iters < 0 or o.log_every < 1 or o.checkpoint_every < 1:
        problems.append("optim.batch, optim.log_every and optim.checkpoint_every must be >= 1, optim.iters >= 0")
    if o.dtype not in ("float64", "float32"):
        problems.append(f"optim.dtype must be float64 or float32, got '{o.dtype}'")
    if config.data.corpus_size < 1 or config.data.n_raw < 2:
        problems.append("data.corpus_size must be >= 1 and data.n_raw >= 2")
    if config.eval.repeats < 1 or config.eval.pool < 2 or config.eval.diversity_pairs < 1:
        problems.append("eval.repeats >= 1, eval.pool >= 2 and eval.diversity_pairs >= 1 are required")
    if problems:
        raise ConfigError("Invalid configuration: " + "; ".join(problems))


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """
    Load a RunConfig from a `key = value` file (defaults when path is None)
    and apply command-line overrides on top.
    """
    pairs: List[Tuple[str, str]] = []
    if path:
        with open(path, "r", encoding="utf-8") as handle:
            pairs = parse_config_lines(handle)
        logging.info(f"Config loaded from '{path}' ({len(pairs)} keys).")
    pairs.extend((overrides or {}).items())
    return build_config(pairs)


def variant_config(base: RunConfig, variant: str) -> RunConfig:
    """Re-build ``base`` with an ablation variant applied; the variant's own keys win over the base's."""
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"Unknown ablation variant '{variant}'")
    flat = dict(base.flatten())
    overridden = ABLATION_VARIANTS[variant]
    pairs = [(key, flat[key]) for key in sorted(base.explicit_keys) if key in flat and key not in overridden]
    pairs.append(("variant", variant))
    return build_config(pairs)


def structural_divergence(expected: RunConfig, actual: RunConfig) -> List[str]:
    """Structural keys whose values differ, formatted as 'key: a != b'."""
    left, right = expected.structural(), actual.structural()
    return [f"{key}: {left[key]} != {right[key]}" for key in left if left[key] != right[key]]


def get_log_level():
    """
    Fetch the TRIC_LOG_LEVEL value from the environment variable.
    Default: INFO
    """
    return os.getenv("TRIC_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()


def get_eval_workers():
    """
    Fetch the TRIC_EVAL_WORKERS value from the environment variable.
    Used for running evaluation repeats concurrently.
    Default: 1
    Maximum: 8 (values > 8 will be capped at 8)
    """
    workers = int(os.getenv("TRIC_EVAL_WORKERS", DEFAULT_EVAL_WORKERS))
    return max(1, min(workers, MAX_EVAL_WORKERS))


def get_selftest_trials():
    """
    Fetch the TRIC_SELFTEST_TRIALS value from the environment variable.
    Number of seeded random cases per selftest property.
    Default: 100
    Maximum: 1000 (values > 1000 will be capped at 1000)
    """
    trials = int(os.getenv("TRIC_SELFTEST_TRIALS", DEFAULT_SELFTEST_TRIALS))
    return max(1, min(trials, MAX_SELFTEST_TRIALS))
