"""Pieces shared by the commands: model construction, corpus loading and guided sampling."""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core import numcore as nc
from ..core.denoiser import Denoiser
from ..core.motion_repr import (CHANNELS, CorpusError, TextCondition, batch_conditions, default_skeleton,
                                null_batch, skeleton_adjacency, synth_dataset, toy_text_encode)
from ..core.schedule import DiffusionSchedule, cfg_combine, p_sample_loop
from ..utility.tensor_io import read_corpus, read_skeleton
from ..utility.utils import RunConfig

DTYPES = {"float64": np.float64, "float32": np.float32}


def resolve_dtype(config: RunConfig):
    return DTYPES[config.optim.dtype]


def build_denoiser(config: RunConfig, dtype=None) -> Denoiser:
    model = config.model
    if config.path.skeleton:
        skeleton = skeleton_adjacency(model.M, read_skeleton(config.path.skeleton))
    else:
        skeleton = default_skeleton(model.M)
    return Denoiser(model, config.ablation, config.ccmd, config.data.n_raw, config.seed,
                    skeleton=skeleton, dtype=dtype or resolve_dtype(config))


def load_corpus(config: RunConfig, directory: Optional[str] = None) -> List[Tuple[str, np.ndarray]]:
    """Read the corpus directory when one is configured, otherwise generate the synthetic corpus."""
    directory = directory or config.path.corpus
    if directory:
        corpus = read_corpus(directory)
        logging.info(f"Loaded {len(corpus)} corpus items from '{directory}'")
    else:
        corpus = synth_dataset(config.data.seed, config.data.corpus_size, config.model.M, config.data.n_raw)
        logging.info(f"Generated synthetic corpus of {len(corpus)} items (seed {config.data.seed})")
    expected = (config.data.n_raw, config.model.M, CHANNELS)
    for prompt, motion in corpus:
        if motion.shape != expected:
            raise CorpusError(f"Corpus item '{prompt}' has shape {motion.shape}, expected {expected}")
    return corpus


def encode_prompts(prompts: Sequence[str], d_text: int) -> List[TextCondition]:
    return [toy_text_encode(prompt, d_text) for prompt in prompts]


def sample_motions(
    model: Denoiser,
    schedule: DiffusionSchedule,
    conditions: Sequence[TextCondition],
    seed: int,
    guidance: float,
    variance: str = "posterior",
) -> np.ndarray:
    """
    One motion per condition: seeded Gaussian start, T reverse steps, each
    combining the conditional and null-condition predictions with
    classifier-free guidance. Returned motions are in corpus units.
    """
    count = len(conditions)
    rng = np.random.default_rng(seed)
    dtype = model.head.weight.dtype
    x_T = rng.standard_normal((count, model.n_raw, model.model.M, CHANNELS)).astype(dtype)
    text = batch_conditions(conditions)
    unconditional = null_batch(count, model.model.d_text)

    def predict_x0(x_t: np.ndarray, t: int) -> np.ndarray:
        with nc.no_grad():
            steps = np.full(count, t)
            uncond = model(x_t, steps, unconditional).x0_hat.data if guidance != 1.0 else None
            if guidance == 0.0:
                return uncond
            cond = model(x_t, steps, text).x0_hat.data
            return cond if uncond is None else cfg_combine(cond, uncond, guidance)

    return model.normalizer.denormalize(p_sample_loop(schedule, predict_x0, x_T, rng, variance=variance))
