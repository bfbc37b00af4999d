"""
`tric selftest`: the invariant suites that back the numerical core, runnable
without pytest. Each suite returns a SuiteResult; the command logs one line
per suite and fails when any suite fails.
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from ..core import numcore as nc
from ..core.causal import DomainDisentangler, intervene
from ..core.denoiser import (Denoiser, FrequencyModule, ScoreFusion, SpatialGraphModule, TemporalMixingEncoder,
                             TextInjection, fusion_weights)
from ..core.layers import LayerNorm, Linear
from ..core.metrics import frechet_distance, matrix_sqrt, r_precision
from ..core.motion_repr import CHANNELS, TokenAssembler, batch_conditions, default_skeleton, toy_text_encode
from ..core.objective import (LossParts, LossWeights, PerceptualEncoder, loss_fcf, loss_perceptual, loss_simple,
                              loss_total)
from ..core.schedule import cosine_schedule, p_sample_loop, q_sample
from ..core.spectral import dwt_haar, idwt_haar, irfft_frames, rfft_frames
from ..utility.utils import ABLATION_VARIANTS, RunConfig, build_config, get_selftest_trials, variant_config
from .runtime import build_denoiser, sample_motions

TRANSFORM_TOL = 1e-9
HFA_TOL = 1e-8
SIMPLEX_TOL = 1e-6
UNIFORM_TOL = 1e-9
GRAD_TOL = 1e-4
E2E_SAMPLE_FRACTION = 0.01
VARIANCE_DRAWS = 100_000
VARIANCE_TOL = 0.02
ORACLE_MSE = 0.05
FID_TOL = 1e-6
SQRT_TOL = 1e-8
CHANCE_REPEATS = 20

GRADIENT_TOY = {
    "model.J": "2", "model.D": "8", "model.M": "4", "model.heads": "2", "model.d_text": "8",
    "model.s": "2", "model.gn_groups": "4", "model.gcn_layers": "2", "data.n_raw": "8",
    "diffusion.T": "10", "optim.batch": "2", "optim.dtype": "float64",
}


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def gradient_toy_config(**overrides: str) -> RunConfig:
    """The small float64 configuration every end-to-end check runs on."""
    pairs = dict(GRADIENT_TOY)
    pairs.update(overrides)
    return build_config(pairs.items())


def _toy_batch(config: RunConfig, rng: np.random.Generator, prompts=("walk slow forward", "wave fast left")):
    batch = len(prompts)
    x0 = rng.standard_normal((batch, config.data.n_raw, config.model.M, CHANNELS))
    t = rng.integers(1, config.diffusion.T + 1, size=batch)
    text = batch_conditions([toy_text_encode(p, config.model.d_text) for p in prompts])
    return x0, t, text


def _toy_loss(model: Denoiser, config: RunConfig, x0, t, text, eps) -> nc.Tensor:
    schedule = cosine_schedule(config.diffusion.T)
    out = model(q_sample(schedule, x0, t, eps), t, text, mode="train")
    parts = LossParts(simple=loss_simple(x0, out.x0_hat))
    weights = LossWeights(config.loss.lambda_fcf, config.loss.lambda_p, config.layer_weights)
    if weights.lambda_fcf > 0:
        parts.fcf = loss_fcf(out.bundle, x0, weights.w_layers)
    if weights.lambda_p > 0:
        parts.p = loss_perceptual(x0, out.x0_hat, PerceptualEncoder(config.model.M))
    return loss_total(parts, weights)


# -- suites --------------------------------------------------------------------

def suite_transforms(trials: int) -> Tuple[bool, str]:
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(10 * trials):
        length = int(rng.integers(1, 17))
        x = rng.standard_normal((length, int(rng.integers(1, 5)), int(rng.integers(1, 7))))
        low, high, n = dwt_haar(x, axis=0)
        worst = max(worst, np.max(np.abs(idwt_haar(low, high, n, axis=0).data - x)))
        real, imag = rfft_frames(x, axis=0)
        worst = max(worst, np.max(np.abs(irfft_frames(real, imag, length, axis=0).data - x)))

        energy = np.sum(x * x)
        if length % 2 == 0:
            worst = max(worst, abs(np.sum(low.data ** 2) + np.sum(high.data ** 2) - energy))
        power = real.data ** 2 + imag.data ** 2
        doubled = np.full(power.shape[0], 2.0)
        doubled[0] = 1.0
        if length % 2 == 0:
            doubled[-1] = 1.0
        worst = max(worst, abs(np.sum(doubled[:, None, None] * power) / length - energy))
    return worst < TRANSFORM_TOL, f"max round-trip / Parseval error {worst:.2e} over {10 * trials} cases"


def suite_hfa_identity(trials: int) -> Tuple[bool, str]:
    rng = np.random.default_rng(202)
    module = FrequencyModule(8, 4, rng)
    module.low.mix.zero_()
    module.high.norm.gamma.data[...] = 0.0
    module.high.norm.beta.data[...] = 0.0
    worst = 0.0
    with nc.no_grad():
        for _ in range(trials):
            x = rng.standard_normal((1, int(rng.integers(2, 12)), 4, 8))
            worst = max(worst, np.max(np.abs(module(x).data - x)))
    return worst < HFA_TOL, f"max |hfa(X) - X| {worst:.2e} over {trials} inputs"


def suite_fusion_simplex(trials: int) -> Tuple[bool, str]:
    rng = np.random.default_rng(303)
    fusion = ScoreFusion(8, 3, rng)
    worst_sum, inside = 0.0, True
    with nc.no_grad():
        for _ in range(trials):
            x = rng.standard_normal((1, 4, 3, 8))
            features = [rng.standard_normal(x.shape) for _ in range(3)]
            _, alpha = fusion([nc.Tensor(f) for f in features], nc.Tensor(x), nc.Tensor(rng.standard_normal((1, 8))))
            worst_sum = max(worst_sum, np.max(np.abs(alpha.data.sum(axis=-1) - 1.0)))
            inside = inside and bool(np.all((alpha.data > 0) & (alpha.data < 1)))
        uniform = fusion_weights(nc.Tensor(np.zeros((2, 3))), nc.Tensor(np.zeros((2, 3)))).data
    uniform_err = float(np.max(np.abs(uniform - 1.0 / 3.0)))
    passed = worst_sum < SIMPLEX_TOL and inside and uniform_err < UNIFORM_TOL
    return passed, f"max |sum(alpha) - 1| {worst_sum:.2e}, open simplex {inside}, uniform error {uniform_err:.2e}"


def _block_checks(rng: np.random.Generator) -> Dict[str, Tuple[Callable[[], nc.Tensor], List[nc.Tensor]]]:
    dim, joints = 8, 4
    grid = rng.standard_normal((1, 5, joints, dim))
    direction = rng.standard_normal(grid.shape)
    a_hat = default_skeleton(joints).A_hat
    tau = rng.standard_normal((1, 3, dim))
    cls = rng.standard_normal((1, dim))

    norm = LayerNorm(dim)
    for p in norm.parameters():
        p.data[...] += 0.1 * rng.standard_normal(p.shape)
    x_norm = nc.Tensor(rng.standard_normal((4, dim)), requires_grad=True)
    tme = TemporalMixingEncoder(dim, 2, 2, rng)
    stm = SpatialGraphModule(dim, 2, rng)
    hfa = FrequencyModule(dim, 4, rng)
    fusion = ScoreFusion(dim, 3, rng)
    fuse_inputs = [rng.standard_normal(grid.shape) for _ in range(3)]
    tij = TextInjection(dim, dim, 2, rng)
    ccmd = DomainDisentangler(dim, 2, rng)
    assembler = TokenAssembler(dim, dim, rng)
    motion = rng.standard_normal((1, 3, joints, dim))

    def weighted(out: nc.Tensor) -> nc.Tensor:
        return nc.tsum(out * direction[tuple(slice(0, s) for s in out.shape)])

    def ccmd_loss() -> nc.Tensor:
        e, c, f_tilde = ccmd(nc.Tensor(grid))
        return weighted(e) + weighted(c) + weighted(f_tilde)

    return {
        "layer_norm": (lambda: nc.tsum(norm(x_norm) * direction[0, :4, 0, :]), [x_norm] + norm.parameters()),
        "tme": (lambda: weighted(tme(nc.Tensor(grid))), tme.parameters()),
        "stm": (lambda: weighted(stm(nc.Tensor(grid), a_hat)), stm.parameters()),
        "hfa": (lambda: weighted(hfa(nc.Tensor(grid))), hfa.parameters()),
        "sfus": (lambda: weighted(fusion([nc.Tensor(f) for f in fuse_inputs], nc.Tensor(grid), nc.Tensor(cls))[0]),
                 fusion.parameters()),
        "tij": (lambda: weighted(tij(nc.Tensor(grid), nc.Tensor(tau))), tij.parameters()),
        "ccmd": (ccmd_loss, ccmd.parameters()),
        "tokens": (lambda: weighted(assembler(nc.Tensor(motion), np.array([3]), cls)), assembler.parameters()),
    }


def suite_gradients(trials: int) -> Tuple[bool, str]:
    rng = np.random.default_rng(404)
    failures, worst = [], 0.0
    for name, (f, params) in _block_checks(rng).items():
        report = nc.finite_diff_check(f, params, tol=GRAD_TOL, rng=np.random.default_rng(1))
        worst = max(worst, report.max_rel_err)
        if not report.passed:
            failures.append(f"{name} ({report.max_rel_err:.2e})")

    config = gradient_toy_config()
    model = build_denoiser(config)
    x0, t, text = _toy_batch(config, rng)
    eps = rng.standard_normal(x0.shape)
    report = nc.finite_diff_check(lambda: _toy_loss(model, config, x0, t, text, eps), model.parameters(),
                                  tol=GRAD_TOL, sample_fraction=E2E_SAMPLE_FRACTION,
                                  rng=np.random.default_rng(2))
    if not report.passed:
        failures.append(f"end-to-end ({report.max_rel_err:.2e})")
    detail = (f"blocks worst relative error {worst:.2e}; end-to-end {report.max_rel_err:.2e} "
              f"over {report.checked} sampled entries")
    if failures:
        detail += "; failed: " + ", ".join(failures)
    return not failures, detail


def suite_diffusion(trials: int) -> Tuple[bool, str]:
    schedule = cosine_schedule(50)
    decreasing = bool(np.all(np.diff(schedule.alpha_bar) < 0))
    small_end = schedule.alpha_bar[-1] < 0.01

    rng = np.random.default_rng(505)
    t = 25
    draws = q_sample(schedule, np.zeros(VARIANCE_DRAWS), t, rng.standard_normal(VARIANCE_DRAWS))
    variance_err = abs(np.var(draws) / (1.0 - schedule.alpha_bar[t]) - 1.0)

    x0 = np.sin(np.linspace(0.0, 2.0 * np.pi, 16))
    recovered = p_sample_loop(schedule, lambda x, step: x0, rng.standard_normal(x0.shape), rng)
    oracle_mse = float(np.mean((recovered - x0) ** 2))
    passed = decreasing and small_end and variance_err < VARIANCE_TOL and oracle_mse < ORACLE_MSE
    return passed, (f"alpha_bar decreasing {decreasing}, alpha_bar_T {schedule.alpha_bar[-1]:.2e}, "
                    f"q_sample variance error {variance_err:.2%}, oracle MSE {oracle_mse:.2e}")


def suite_ccmd(trials: int) -> Tuple[bool, str]:
    config = gradient_toy_config(**{"diffusion.T": "3"})
    model = build_denoiser(config)
    schedule = cosine_schedule(config.diffusion.T)
    conditions = [toy_text_encode("jump fast backward", config.model.d_text)] * 2
    before = sample_motions(model, schedule, conditions, 7, config.diffusion.guidance_scale)
    rng = np.random.default_rng(606)
    for name, p in model.named_parameters():
        if name.startswith("ccmd."):
            p.data[...] = rng.standard_normal(p.shape)
    after = sample_motions(model, schedule, conditions, 7, config.diffusion.guidance_scale)
    invariant = bool(np.array_equal(before, after))

    w_do = Linear(8, 8, rng, bias=False)
    e1, e2, c1, c2 = (nc.Tensor(rng.standard_normal((2, 3, 4, 8))) for _ in range(4))
    zero_when_equal = bool(np.all(intervene(e1, e1, w_do).data == 0.0))
    combined = intervene(e1 + 2.0 * e2, c1 + 2.0 * c2, w_do).data
    separate = intervene(e1, c1, w_do).data + 2.0 * intervene(e2, c2, w_do).data
    linearity_err = float(np.max(np.abs(combined - separate)))
    passed = invariant and zero_when_equal and linearity_err < 1e-12
    return passed, (f"inference invariant {invariant}, E == C gives zero {zero_when_equal}, "
                    f"linearity error {linearity_err:.2e}")


def suite_metrics(trials: int) -> Tuple[bool, str]:
    rng = np.random.default_rng(707)
    features = rng.standard_normal((64, 8))
    fid_self = frechet_distance(features, features)

    basis = rng.standard_normal((8, 8))
    spd = basis @ basis.T + 8.0 * np.eye(8)
    values, vectors = np.linalg.eigh(spd)
    reference = (vectors * np.sqrt(values)) @ vectors.T
    sqrt_err = float(np.max(np.abs(matrix_sqrt(spd) - reference)))

    hits = []
    for _ in range(CHANCE_REPEATS):
        hits.append(r_precision(rng.standard_normal((64, 8)), rng.standard_normal((64, 8)), rng, pool=32)[0])
    chance = 1.0 / 32.0
    band = 3.0 * np.sqrt(chance * (1.0 - chance) / (64 * CHANCE_REPEATS))
    r1 = float(np.mean(hits))
    passed = fid_self < FID_TOL and sqrt_err < SQRT_TOL and abs(r1 - chance) < band
    return passed, (f"FID(self) {fid_self:.2e}, sqrtm error {sqrt_err:.2e}, "
                    f"chance R@1 {r1:.4f} (expected {chance:.4f} +/- {band:.4f})")


def suite_ablations(trials: int) -> Tuple[bool, str]:
    base = gradient_toy_config()
    rng = np.random.default_rng(808)
    failures = []
    for variant in ABLATION_VARIANTS:
        try:
            config = variant_config(base, variant)
            model = build_denoiser(config)
            x0, t, text = _toy_batch(config, rng)
            loss = _toy_loss(model, config, x0, t, text, rng.standard_normal(x0.shape))
            loss.backward()
            grads_finite = all(p.grad is None or np.all(np.isfinite(p.grad)) for p in model.parameters())
            with nc.no_grad():
                shape = model(x0, t, text).x0_hat.shape
            if not (np.isfinite(loss.data) and grads_finite and shape == x0.shape):
                failures.append(variant)
        except Exception as e:
            logging.error(f"Ablation variant '{variant}' failed: {e}", exc_info=True)
            failures.append(variant)
    detail = f"{len(ABLATION_VARIANTS) - len(failures)}/{len(ABLATION_VARIANTS)} variants built and trained one step"
    if failures:
        detail += "; failed: " + ", ".join(failures)
    return not failures, detail


SUITES: Dict[str, Callable[[int], Tuple[bool, str]]] = {
    "transforms": suite_transforms,
    "hfa_identity": suite_hfa_identity,
    "fusion_simplex": suite_fusion_simplex,
    "gradients": suite_gradients,
    "diffusion": suite_diffusion,
    "ccmd": suite_ccmd,
    "metrics": suite_metrics,
    "ablations": suite_ablations,
}


def run_suites(names: List[str], trials: int) -> List[SuiteResult]:
    results = []
    for name in names:
        started = time.perf_counter()
        try:
            passed, detail = SUITES[name](trials)
        except Exception as e:
            logging.error(f"Selftest suite '{name}' raised: {e}", exc_info=True)
            passed, detail = False, f"raised {type(e).__name__}: {e}"
        result = SuiteResult(name, passed, detail, time.perf_counter() - started)
        log = logging.info if passed else logging.error
        log(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail} ({result.seconds:.1f}s)")
        results.append(result)
    return results


def selftest_main_function(ablations_only: bool = False) -> bool:
    """Entry point of `tric selftest`; True when every suite passed."""
    logging.info("--- Starting selftest ---")
    names = ["ablations"] if ablations_only else list(SUITES)
    results = run_suites(names, get_selftest_trials())
    failed = [r.name for r in results if not r.passed]
    if failed:
        logging.error(f"Selftest failed: {', '.join(failed)}")
    else:
        logging.info(f"Selftest passed: {len(results)} suite(s)")
    return not failed
