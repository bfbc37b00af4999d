import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.denoiser import Denoiser
from ..core.metrics import MetricsReport, TextMotionEvaluator, metric_suite
from ..core.motion_repr import CorpusError
from ..core.objective import PerceptualEncoder
from ..core.schedule import cosine_schedule
from ..utility.run_manager import RunManager
from ..utility.utils import RunConfig, get_eval_workers
from .runtime import encode_prompts, load_corpus, sample_motions
from .sample_command import load_model


@dataclass
class EvalSpace:
    """Frozen encoder plus the ridge text map, fitted once on the real corpus."""
    encoder: PerceptualEncoder
    evaluator: TextMotionEvaluator
    real: np.ndarray
    text: np.ndarray


def build_eval_space(corpus: Sequence[Tuple[str, np.ndarray]], joints: int, d_text: int) -> EvalSpace:
    encoder = PerceptualEncoder(joints)
    real = encoder.embed(np.stack([motion for _, motion in corpus]))
    cls = np.stack([c.cls for c in encode_prompts([prompt for prompt, _ in corpus], d_text)])
    evaluator = TextMotionEvaluator().fit(cls, real)
    return EvalSpace(encoder=encoder, evaluator=evaluator, real=real, text=evaluator.text_embed(cls))


def run_repeats(
    space: EvalSpace,
    generate: Callable[[int], np.ndarray],
    repeats: int,
    seed: int,
    pool: int,
    pairs: int,
) -> Tuple[List[Dict[str, float]], List[Dict[str, float]]]:
    """
    Evaluate ``repeats`` generated sets. Each repeat has its own seeds, so
    results do not depend on how many workers run them; ``map`` keeps the
    aggregation in repeat order.
    """

    def one_repeat(repeat: int) -> Tuple[Dict[str, float], Dict[str, float]]:
        generated = space.encoder.embed(generate(repeat))
        rng = np.random.default_rng([seed, repeat, 1])
        generated_row = metric_suite(space.real, generated, space.text, rng, pool=pool, pairs=pairs)
        real_row = metric_suite(space.real, space.real, space.text, rng, pool=pool, pairs=pairs)
        logging.info(f"Repeat {repeat + 1}/{repeats}: fid_toy={generated_row['fid_toy']:.6f} "
                     f"r_precision_top1={generated_row['r_precision_top1']:.4f}")
        return generated_row, real_row

    workers = min(get_eval_workers(), repeats)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(one_repeat, range(repeats)))
    else:
        results = [one_repeat(repeat) for repeat in range(repeats)]
    return [r[0] for r in results], [r[1] for r in results]


def evaluate_model(model: Denoiser, config: RunConfig, corpus: Sequence[Tuple[str, np.ndarray]],
                   repeats: int) -> MetricsReport:
    """Metric suite of samples generated for every corpus prompt, next to the ground-truth row."""
    pool = config.eval.pool
    if len(corpus) < pool:
        raise CorpusError(f"Evaluation corpus holds {len(corpus)} pairs; at least {pool} are needed")
    space = build_eval_space(corpus, config.model.M, config.model.d_text)
    schedule = cosine_schedule(config.diffusion.T)
    conditions = encode_prompts([prompt for prompt, _ in corpus], config.model.d_text)

    def generate(repeat: int) -> np.ndarray:
        return sample_motions(model, schedule, conditions, config.seed + repeat,
                              config.diffusion.guidance_scale, config.diffusion.sampling_variance)

    generated, real = run_repeats(space, generate, repeats, config.seed, pool, config.eval.diversity_pairs)
    return MetricsReport.from_repeats(real, prefix="gt_").merge(MetricsReport.from_repeats(generated))


def eval_main_function(
    checkpoint_path: str,
    corpus_dir: Optional[str],
    repeats: Optional[int],
    out_path: str,
    runtime_config: Optional[RunConfig] = None,
) -> MetricsReport:
    """Entry point of `tric eval`."""
    logging.info("--- Starting evaluation ---")
    config, model = load_model(checkpoint_path, runtime_config)
    repeats = config.eval.repeats if repeats is None else repeats
    if repeats < 1:
        raise ValueError(f"Repeat count must be >= 1, got {repeats}")
    corpus = load_corpus(config, corpus_dir)
    logging.info(f"Evaluating {len(corpus)} prompts over {repeats} repeats ({get_eval_workers()} worker(s))")
    report = evaluate_model(model, config, corpus, repeats)
    manager = RunManager(config.path.out_dir, logger=logging.getLogger("tric.eval"))
    manager.write_report(report.lines(), out_path)
    for line in report.lines():
        logging.info(line)
    return report
