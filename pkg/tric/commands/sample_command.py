import logging
import time
from typing import List, Optional, Tuple

import numpy as np

from ..core.denoiser import Denoiser
from ..core.schedule import cosine_schedule
from ..utility.run_manager import RunManager
from ..utility.utils import CheckpointMismatchError, RunConfig, structural_divergence
from .runtime import build_denoiser, encode_prompts, sample_motions


def load_model(checkpoint_path: str, runtime_config: Optional[RunConfig] = None) -> Tuple[RunConfig, Denoiser]:
    """
    Rebuild the denoiser from a checkpoint. When a runtime configuration is
    given its structural keys must match the checkpoint's echo.
    """
    config, state = RunManager.load_checkpoint(checkpoint_path)
    if runtime_config is not None:
        divergent = structural_divergence(config, runtime_config)
        if divergent:
            raise CheckpointMismatchError(
                f"Checkpoint '{checkpoint_path}' does not match the runtime configuration: " + "; ".join(divergent))
    model = build_denoiser(config)
    model.load_state_dict(state)
    logging.info(f"Loaded checkpoint '{checkpoint_path}' ({model.num_parameters()} parameters)")
    return config, model


def sample_main_function(
    checkpoint_path: str,
    prompt: str,
    seed: int,
    count: int,
    out_dir: str,
    runtime_config: Optional[RunConfig] = None,
    guidance: Optional[float] = None,
) -> List[str]:
    """Entry point of `tric sample`; returns the written motion file paths."""
    logging.info("--- Starting sampling ---")
    if count < 1:
        raise ValueError(f"Sample count must be >= 1, got {count}")
    config, model = load_model(checkpoint_path, runtime_config)
    g = config.diffusion.guidance_scale if guidance is None else guidance
    if g < 0:
        raise ValueError(f"Guidance scale must be >= 0, got {g}")
    schedule = cosine_schedule(config.diffusion.T)
    conditions = encode_prompts([prompt] * count, config.model.d_text)

    logging.info(f"Sampling {count} motion(s) for '{prompt}' (seed {seed}, g={g}, T={schedule.T})")
    started = time.perf_counter()
    motions = sample_motions(model, schedule, conditions, seed, g, config.diffusion.sampling_variance)
    elapsed = time.perf_counter() - started
    logging.info(f"Average inference time: {elapsed / count:.3f}s per motion")

    manager = RunManager(out_dir, logger=logging.getLogger("tric.sample"))
    written = []
    for index, motion in enumerate(np.asarray(motions, dtype=np.float64)):
        written.append(manager.write_motion(f"sample_{index:03d}.motion", motion))
        manager.write_trajectories(f"sample_{index:03d}.xy", motion)
    logging.info(f"Wrote {len(written)} motion file(s) to '{out_dir}'")
    return written
