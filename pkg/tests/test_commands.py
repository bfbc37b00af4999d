import csv
import os

import numpy as np
import pytest

from tric.cli import main
from tric.commands import runtime
from tric.commands.eval_command import eval_main_function
from tric.commands.runtime import build_denoiser, encode_prompts, load_corpus, sample_motions
from tric.commands.sample_command import load_model, sample_main_function
from tric.commands.train_command import draw_batch, run_training
from tric.core.metrics import diversity, frechet_distance
from tric.core.motion_repr import CorpusError, synth_dataset
from tric.core.objective import NonFiniteLossError, PerceptualEncoder
from tric.core.schedule import cosine_schedule
from tric.utility.run_manager import RunManager
from tric.utility.tensor_io import read_tensor
from tric.utility.utils import CheckpointMismatchError, build_config, load_config

from conftest import toy_pairs


def _train(tmp_path, name="run", **overrides):
    config = build_config(toy_pairs(**overrides).items())
    return run_training(config, RunManager(str(tmp_path / name)))


def _column(path, name):
    with open(path, encoding="utf-8") as handle:
        return [row[name] for row in csv.DictReader(handle)]


@pytest.fixture
def trained(tmp_path):
    return _train(tmp_path, "trained", **{"eval.pool": "4", "eval.diversity_pairs": "4"})


def test_training_is_deterministic(tmp_path):
    first = _train(tmp_path, "a")
    second = _train(tmp_path, "b")
    with open(first.loss_log_path, "rb") as a, open(second.loss_log_path, "rb") as b:
        assert a.read() == b.read()
    assert _column(first.loss_log_path, "iteration") == ["1", "2", "3"]
    assert os.path.exists(first.checkpoint_path)
    assert np.isfinite(first.last_losses["loss_total"])


def test_training_without_ccmd_logs_zero_causal_loss(tmp_path):
    result = _train(tmp_path, **{"ccmd.enabled": "false"})
    assert set(_column(result.loss_log_path, "loss_fcf")) == {"0.0"}
    assert result.model.ccmd is None


def test_ccmd_switch_leaves_denoiser_weights_alone():
    with_ccmd = build_denoiser(build_config(toy_pairs().items()))
    without = build_denoiser(build_config(toy_pairs(**{"ccmd.enabled": "false"}).items()))
    reference = without.state_dict()
    for name, value in with_ccmd.state_dict().items():
        if not name.startswith("ccmd."):
            np.testing.assert_array_equal(value, reference[name])


def test_non_finite_loss_dumps_the_batch(tmp_path):
    config = build_config(toy_pairs().items())
    corpus = [(prompt, np.full_like(motion, np.nan)) for prompt, motion in load_corpus(config)]
    manager = RunManager(str(tmp_path))
    with pytest.raises(NonFiniteLossError):
        run_training(config, manager, corpus=corpus)
    diagnostics = tmp_path / "diagnostics" / "iter_000001"
    assert (diagnostics / "x0.motion").exists()
    assert (diagnostics / "prompts.txt").exists()
    assert read_tensor(str(diagnostics / "t.motion")).shape == (config.optim.batch,)


def test_draw_batch_ranges(rng):
    config = build_config(toy_pairs(**{"optim.batch": "64"}).items())
    motions = np.zeros((8, 8, 4, 12))
    indices, t, eps, null, x0 = draw_batch(rng, motions, config)
    assert indices.min() >= 0 and indices.max() < 8
    assert t.min() >= 1 and t.max() <= config.diffusion.T
    assert eps.shape == x0.shape == (64, 8, 4, 12)
    assert null.dtype == bool


def test_corpus_shape_is_checked(monkeypatch):
    config = build_config(toy_pairs(**{"data.n_raw": "16"}).items())
    assert len(load_corpus(config)) == 8
    short = [(p, m[:4]) for p, m in synth_dataset(0, 2, 4, 16)]
    monkeypatch.setattr(runtime, "synth_dataset", lambda *args, **kwargs: short)
    with pytest.raises(CorpusError, match="expected"):
        load_corpus(config)


def test_unconditional_samples_ignore_the_prompt(trained, tmp_path):
    a = sample_main_function(trained.checkpoint_path, "walk slow forward", 3, 2, str(tmp_path / "a"), guidance=0.0)
    b = sample_main_function(trained.checkpoint_path, "kick fast right", 3, 2, str(tmp_path / "b"), guidance=0.0)
    assert [os.path.basename(p) for p in a] == ["sample_000.motion", "sample_001.motion"]
    for left, right in zip(a, b):
        with open(left, "rb") as x, open(right, "rb") as y:
            assert x.read() == y.read()
    assert (tmp_path / "a" / "sample_000.xy").exists()


def test_sampling_is_seed_deterministic(trained, tmp_path):
    first = sample_main_function(trained.checkpoint_path, "run fast left", 5, 1, str(tmp_path / "a"))
    second = sample_main_function(trained.checkpoint_path, "run fast left", 5, 1, str(tmp_path / "b"))
    other = sample_main_function(trained.checkpoint_path, "run fast left", 6, 1, str(tmp_path / "c"))
    assert open(first[0], "rb").read() == open(second[0], "rb").read()
    assert open(first[0], "rb").read() != open(other[0], "rb").read()


def test_samples_do_not_depend_on_ccmd_weights(trained):
    config, model = load_model(trained.checkpoint_path)
    schedule = cosine_schedule(config.diffusion.T)
    conditions = encode_prompts(["walk slow forward"], config.model.d_text)
    before = sample_motions(model, schedule, conditions, 11, 4.0)
    perturb = np.random.default_rng(99)
    for name, p in model.named_parameters():
        if name.startswith("ccmd."):
            p.data[...] = perturb.standard_normal(p.shape)
    np.testing.assert_array_equal(sample_motions(model, schedule, conditions, 11, 4.0), before)


def test_checkpoint_structure_mismatch_is_reported(trained, tmp_path):
    runtime_config = build_config(toy_pairs(**{"model.D": "16"}).items())
    with pytest.raises(CheckpointMismatchError, match="model.D: 8 != 16"):
        sample_main_function(trained.checkpoint_path, "walk slow forward", 0, 1, str(tmp_path),
                             runtime_config=runtime_config)
    with pytest.raises(ValueError):
        sample_main_function(trained.checkpoint_path, "walk slow forward", 0, 0, str(tmp_path))


def test_eval_writes_ground_truth_and_model_rows(trained, tmp_path):
    out = tmp_path / "report.txt"
    report = eval_main_function(trained.checkpoint_path, None, 2, str(out))
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines == report.lines()
    names = [line.split()[0] for line in lines]
    assert names[:7] == ["gt_fid_toy", "gt_r_precision_top1", "gt_r_precision_top2", "gt_r_precision_top3",
                         "gt_mm_dist", "gt_diversity", "gt_clip_score"]
    assert names[7:] == [name[len("gt_"):] for name in names[:7]]
    assert all(len(line.split()) == 3 for line in lines)


def test_eval_needs_a_full_retrieval_pool(tmp_path):
    result = _train(tmp_path)
    with pytest.raises(CorpusError):
        eval_main_function(result.checkpoint_path, None, 1, str(tmp_path / "report.txt"))


def test_eval_rejects_an_explicit_zero_repeat_count(trained, tmp_path):
    out = tmp_path / "report.txt"
    with pytest.raises(ValueError, match="Repeat count"):
        eval_main_function(trained.checkpoint_path, None, 0, str(out))
    assert not out.exists()


def test_checkpoint_carries_the_corpus_normalizer(trained, tmp_path):
    _, model = load_model(trained.checkpoint_path)
    fitted = trained.model.normalizer
    assert not np.allclose(fitted.std, 1.0)
    np.testing.assert_allclose(model.normalizer.mean, fitted.mean, rtol=1e-7, atol=1e-12)
    np.testing.assert_allclose(model.normalizer.std, fitted.std, rtol=1e-7)
    raw = _train(tmp_path, "raw", **{"data.normalize": "false"})
    np.testing.assert_array_equal(raw.model.normalizer.std, 1.0)


def test_state_without_normalizer_loads_as_identity(trained):
    _, model = load_model(trained.checkpoint_path)
    state = {k: v for k, v in model.state_dict().items() if not k.startswith("normalizer.")}
    model.load_state_dict(state)
    np.testing.assert_array_equal(model.normalizer.mean, 0.0)
    np.testing.assert_array_equal(model.normalizer.std, 1.0)
    with pytest.raises(ValueError):
        model.load_state_dict({**state, "normalizer.mean": np.zeros((2, 12)), "normalizer.std": np.ones((2, 12))})


def test_cli_train_then_sample(tmp_path):
    conf = tmp_path / "toy.conf"
    conf.write_text("".join(f"{key} = {value}\n" for key, value in toy_pairs().items()), encoding="utf-8")
    out_dir = tmp_path / "cli"
    assert main(["train", "--config", str(conf), "--set", "optim.iters=2", "--out-dir", str(out_dir)]) == 0
    assert _column(str(out_dir / "losses.csv"), "iteration") == ["1", "2"]
    checkpoint = str(out_dir / "checkpoint.tric")
    assert main(["sample", "--ckpt", checkpoint, "--prompt", "walk slow forward", "--out", str(tmp_path / "s"),
                 "--guidance", "2"]) == 0
    assert (tmp_path / "s" / "sample_000.motion").exists()
    assert main(["corpus", "--set", "data.corpus_size=3", "--out", str(tmp_path / "corpus")]) == 0
    assert len(list((tmp_path / "corpus").glob("*.txt"))) == 3


def test_cli_failures_return_one(tmp_path):
    assert main([]) == 1
    assert main(["train", "--set", "model.J"]) == 1
    assert main(["train", "--set", "model.width=3"]) == 1
    assert main(["sample", "--ckpt", str(tmp_path / "missing.tric"), "--prompt", "walk slow forward",
                 "--out", str(tmp_path)]) == 1


def _overfit_config(tmp_path, **overrides):
    path = os.path.join(os.path.dirname(__file__), "..", "configs", "overfit.conf")
    return load_config(path, {"path.out_dir": str(tmp_path), **overrides})


def _tail_mean(path, name, count):
    return float(np.mean([float(v) for v in _column(path, name)[-count:]]))


@pytest.mark.slow
def test_overfit_run_recovers_training_motions(tmp_path):
    config = _overfit_config(tmp_path)
    result = run_training(config, RunManager(str(tmp_path)))
    assert _tail_mean(result.loss_log_path, "loss_simple", 50) < 0.05

    corpus = load_corpus(config)
    motions = np.stack([motion for _, motion in corpus])
    conditions = encode_prompts([prompt for prompt, _ in corpus], config.model.d_text)
    samples = sample_motions(result.model, cosine_schedule(config.diffusion.T), conditions, 0,
                             config.diffusion.guidance_scale)
    # compared in the per-channel normalised units the model is trained in
    normalizer = result.model.normalizer
    assert np.mean((normalizer.normalize(samples[0]) - normalizer.normalize(motions[0])) ** 2) < 0.1

    noise = normalizer.denormalize(np.random.default_rng(5).standard_normal(motions.shape))
    flat_samples = normalizer.normalize(samples).reshape(len(samples), -1)
    flat_noise = normalizer.normalize(noise).reshape(len(noise), -1)
    assert diversity(flat_samples, np.random.default_rng(6)) <= diversity(flat_noise, np.random.default_rng(6))
    encoder = PerceptualEncoder(config.model.M)
    real = encoder.embed(motions)
    assert frechet_distance(real, encoder.embed(noise)) > frechet_distance(real, encoder.embed(samples))


@pytest.mark.slow
def test_ccmd_does_not_degrade_reconstruction(tmp_path):
    schedule = {"model.J": "4", "loss.layer_weights": "0.1,0.2,0.3,0.4", "optim.iters": "400"}
    with_ccmd = run_training(_overfit_config(tmp_path / "on", **schedule), RunManager(str(tmp_path / "on")))
    without = run_training(_overfit_config(tmp_path / "off", **schedule, **{"ccmd.enabled": "false"}),
                           RunManager(str(tmp_path / "off")))
    final_on = _tail_mean(with_ccmd.loss_log_path, "loss_simple", 100)
    final_off = _tail_mean(without.loss_log_path, "loss_simple", 100)
    assert final_on <= 1.1 * final_off
