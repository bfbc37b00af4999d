import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..core import numcore as nc
from ..core.denoiser import Denoiser
from ..core.motion_repr import MotionNormalizer, batch_conditions
from ..core.objective import (LossParts, LossWeights, NonFiniteLossError, PerceptualEncoder, loss_fcf,
                              loss_perceptual, loss_simple, loss_total, scalar_value)
from ..core.optim import AdamW
from ..core.schedule import DiffusionSchedule, cosine_schedule, q_sample
from ..utility.run_manager import RunManager
from ..utility.utils import RunConfig
from .runtime import build_denoiser, encode_prompts, load_corpus, resolve_dtype


@dataclass
class TrainingResult:
    """What a finished run leaves behind."""
    model: Denoiser
    checkpoint_path: str
    loss_log_path: str
    last_losses: Dict[str, float]


def draw_batch(
    rng: np.random.Generator,
    motions: np.ndarray,
    config: RunConfig,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Draw one training batch: item indices, timesteps uniform in [1, T],
    Gaussian noise and the condition-dropout flags, in that order from ``rng``.
    """
    batch = config.optim.batch
    indices = rng.integers(0, len(motions), size=batch)
    t = rng.integers(1, config.diffusion.T + 1, size=batch)
    eps = rng.standard_normal((batch,) + motions.shape[1:])
    null = rng.random(batch) < config.diffusion.cond_dropout
    return indices, t, eps, null, motions[indices]


def training_step(
    model: Denoiser,
    schedule: DiffusionSchedule,
    encoder: PerceptualEncoder,
    weights: LossWeights,
    x0: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    text,
) -> Tuple[nc.Tensor, LossParts]:
    """Noise x0 to x_t, predict x0 in train mode and assemble the weighted loss."""
    dtype = model.head.weight.dtype
    x0 = x0.astype(dtype)
    x_t = q_sample(schedule, x0, t, eps).astype(dtype)
    out = model(x_t, t, text, mode="train")
    parts = LossParts(simple=loss_simple(x0, out.x0_hat))
    if weights.lambda_fcf > 0:
        parts.fcf = loss_fcf(out.bundle, x0, weights.w_layers)
    if weights.lambda_p > 0:
        parts.p = loss_perceptual(x0, out.x0_hat, encoder)
    return loss_total(parts, weights), parts


def _loss_row(total, parts: LossParts, t: np.ndarray) -> Dict[str, float]:
    return {
        "t_mean": float(np.mean(t)),
        "loss_total": scalar_value(total),
        "loss_simple": scalar_value(parts.simple),
        "loss_fcf": scalar_value(parts.fcf),
        "loss_p": scalar_value(parts.p),
    }


def run_training(config: RunConfig, manager: RunManager,
                 corpus: Optional[List[Tuple[str, np.ndarray]]] = None) -> TrainingResult:
    """
    Run the full training loop of one configuration and return the trained
    model. Motions are normalised per joint and channel first when
    ``data.normalize`` is set. Losses go to ``losses.csv`` each iteration;
    checkpoints are written every ``optim.checkpoint_every`` iterations and
    at the end.
    """
    dtype = resolve_dtype(config)
    corpus = corpus if corpus is not None else load_corpus(config)
    prompts = [prompt for prompt, _ in corpus]
    motions = np.stack([motion for _, motion in corpus])
    conditions = encode_prompts(prompts, config.model.d_text)

    model = build_denoiser(config, dtype)
    if config.data.normalize:
        model.normalizer = MotionNormalizer.fit(motions)
        motions = model.normalizer.normalize(motions)
    schedule = cosine_schedule(config.diffusion.T)
    encoder = PerceptualEncoder(config.model.M, dtype=dtype)
    weights = LossWeights(config.loss.lambda_fcf, config.loss.lambda_p, config.layer_weights)
    optim = config.optim
    optimizer = AdamW(model.parameters(), lr=optim.lr, betas=(optim.beta1, optim.beta2), eps=optim.eps,
                      weight_decay=optim.weight_decay)
    rng = np.random.default_rng([config.seed, config.data.seed])

    logging.info(f"Training {model.num_parameters()} parameters on {len(corpus)} sequences "
                 f"for {optim.iters} iterations (batch {optim.batch}, {optim.dtype})")
    loss_log_path = manager.open_loss_log()
    checkpoint_path = ""
    row: Dict[str, float] = {}
    started = time.perf_counter()
    try:
        for iteration in range(1, optim.iters + 1):
            indices, t, eps, null, x0 = draw_batch(rng, motions, config)
            text = batch_conditions([conditions[i] for i in indices], null=null)
            optimizer.zero_grad()
            total, parts = training_step(model, schedule, encoder, weights, x0, t, eps, text)
            row = _loss_row(total, parts, t)

            if not np.isfinite(row["loss_total"]):
                manager.dump_diagnostics(iteration, {
                    "x0": x0, "t": t, "eps": eps, "null": null.astype(np.int64), "indices": indices,
                    "prompts": np.asarray([prompts[i] for i in indices]),
                })
                raise NonFiniteLossError(f"Loss is {row['loss_total']} at iteration {iteration}")

            total.backward()
            optimizer.step()
            manager.log_losses(iteration, row)

            if iteration % optim.log_every == 0 or iteration == optim.iters:
                elapsed = time.perf_counter() - started
                logging.info(f"iter {iteration}/{optim.iters}: total={row['loss_total']:.6f} "
                             f"simple={row['loss_simple']:.6f} fcf={row['loss_fcf']:.6f} "
                             f"p={row['loss_p']:.6f} ({elapsed:.1f}s)")
            if iteration % optim.checkpoint_every == 0:
                checkpoint_path = manager.save_checkpoint(config, model.state_dict())
    finally:
        manager.close_loss_log()

    checkpoint_path = manager.save_checkpoint(config, model.state_dict())
    return TrainingResult(model=model, checkpoint_path=checkpoint_path, loss_log_path=loss_log_path,
                          last_losses=row)


def train_main_function(config: RunConfig) -> TrainingResult:
    """Entry point of `tric train`."""
    logging.info("--- Starting training run ---")
    manager = RunManager(config.path.out_dir, logger=logging.getLogger("tric.train"))
    manager.prepare()
    result = run_training(config, manager)
    logging.info(f"Training finished; final checkpoint '{result.checkpoint_path}', "
                 f"loss log '{result.loss_log_path}'")
    return result
