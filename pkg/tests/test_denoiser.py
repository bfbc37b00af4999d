import numpy as np
import pytest

from tric.core import numcore as nc
from tric.core.denoiser import (FrequencyModule, ScoreFusion, SpatialGraphModule, TemporalMixingEncoder,
                                TextInjection, fusion_weights, hfa_forward, sfus_forward, stm_forward,
                                tij_forward, tme_forward)
from tric.core.motion_repr import CHANNELS, default_skeleton, null_batch
from tric.core.numcore import ShapeMismatchError, Tensor


def _weighted(module_out, direction):
    return nc.tsum(module_out * direction)


def test_tme_mixes_frames_per_joint(rng):
    tme = TemporalMixingEncoder(8, 2, 2, rng)
    x = rng.standard_normal((1, 5, 3, 8))
    out = tme_forward(Tensor(x), tme).data
    assert out.shape == x.shape
    changed = x.copy()
    changed[0, 2, 1] += 1.0
    delta = np.abs(tme_forward(Tensor(changed), tme).data - out).sum(axis=(0, 3))
    assert np.all(delta[:, 1] > 0)
    np.testing.assert_allclose(delta[:, [0, 2]], 0.0, atol=1e-12)


def test_tme_attention_rows_are_distributions(rng):
    tme = TemporalMixingEncoder(8, 2, 2, rng)
    _, weights = tme.attend(Tensor(rng.standard_normal((2, 4, 3, 8))))
    assert weights.shape == (2, 3, 2, 4, 4)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-12)


def test_single_frame_tme_gradient(rng):
    tme = TemporalMixingEncoder(8, 2, 2, rng)
    x = rng.standard_normal((1, 3, 2, 8))
    direction = rng.standard_normal(x.shape)
    assert nc.finite_diff_check(lambda: _weighted(tme(Tensor(x)), direction), tme.parameters()).passed


def test_stm_respects_the_graph(rng):
    stm = SpatialGraphModule(8, 1, rng)
    graph = default_skeleton(4)
    x = rng.standard_normal((1, 2, 4, 8))
    out = stm_forward(Tensor(x), graph.A_hat, stm).data
    changed = x.copy()
    changed[0, 0, 0] += 1.0
    delta = np.abs(stm_forward(Tensor(changed), graph.A_hat, stm).data - out).sum(axis=-1)[0, 0]
    # one GCN layer reaches joint 0 and its chain neighbour only
    assert delta[1] > 0 and delta[2] == 0 and delta[3] == 0
    with pytest.raises(ShapeMismatchError):
        stm_forward(Tensor(x), default_skeleton(5).A_hat, stm)


def test_stm_gradient(rng):
    stm = SpatialGraphModule(8, 2, rng)
    a_hat = default_skeleton(4).A_hat
    x = rng.standard_normal((1, 3, 4, 8))
    direction = rng.standard_normal(x.shape)
    assert nc.finite_diff_check(lambda: _weighted(stm(Tensor(x), a_hat), direction), stm.parameters()).passed


def _identity_hfa(rng, **switches):
    module = FrequencyModule(8, 4, rng, **switches)
    module.low.mix.zero_()
    if module.high is not None:
        module.high.norm.gamma.data[...] = 0.0
        module.high.norm.beta.data[...] = 0.0
    return module


@pytest.mark.parametrize("switches", [{}, {"use_fft": False}, {"use_joint": False}, {"use_high": False}])
def test_hfa_identity_settings_reproduce_input(switches, rng):
    module = _identity_hfa(rng, **switches)
    for frames in (2, 5, 9):
        x = rng.standard_normal((2, frames, 4, 8))
        np.testing.assert_allclose(hfa_forward(Tensor(x), module).data, x, atol=1e-8, rtol=0)


def test_hfa_low_gate_leaves_high_band_alone(rng):
    module = FrequencyModule(8, 4, rng)
    frames = np.arange(16)
    x = np.sin(2.0 * np.pi * frames / 16)[None, :, None, None] * rng.standard_normal((1, 1, 4, 8))
    _, high_before, _ = module.bands(Tensor(x))
    module.low.context_t.bias.data[...] += 3.0
    low_boosted, high_after, _ = module.bands(Tensor(x))
    np.testing.assert_array_equal(high_before.data, high_after.data)
    module.low.context_t.bias.data[...] -= 3.0
    low_plain, _, _ = module.bands(Tensor(x))
    assert not np.allclose(low_plain.data, low_boosted.data)


@pytest.mark.parametrize("switches", [{}, {"use_fft": False, "use_joint": False}])
def test_hfa_gradient(switches, rng):
    module = FrequencyModule(8, 4, rng, **switches)
    x = rng.standard_normal((1, 5, 3, 8))
    direction = rng.standard_normal(x.shape)
    assert nc.finite_diff_check(lambda: _weighted(module(Tensor(x)), direction), module.parameters()).passed


def test_fusion_weights_form_a_simplex(rng):
    fusion = ScoreFusion(8, 3, rng)
    for _ in range(20):
        x = Tensor(rng.standard_normal((2, 4, 3, 8)))
        features = [Tensor(rng.standard_normal(x.shape)) for _ in range(3)]
        y, alpha = sfus_forward(*features, x, Tensor(rng.standard_normal((2, 8))), fusion)
        assert y.shape == x.shape
        np.testing.assert_allclose(alpha.data.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all((alpha.data > 0) & (alpha.data < 1))
    uniform = fusion_weights(Tensor(np.zeros((1, 3))), Tensor(np.full((1, 3), 2.5))).data
    np.testing.assert_allclose(uniform, 1.0 / 3.0, atol=1e-9)


def test_fusion_rejects_mismatched_features(rng):
    fusion = ScoreFusion(8, 3, rng)
    x = Tensor(np.zeros((1, 2, 2, 8)))
    with pytest.raises(ShapeMismatchError):
        fusion([x, x], x, Tensor(np.zeros((1, 8))))
    with pytest.raises(ShapeMismatchError):
        fusion([x, x, Tensor(np.zeros((1, 3, 2, 8)))], x, Tensor(np.zeros((1, 8))))


def test_concat_fusion_has_no_weights(rng):
    fusion = ScoreFusion(8, 2, rng, mode="concat")
    x = Tensor(rng.standard_normal((1, 3, 2, 8)))
    y, alpha = fusion([x, x], x, Tensor(np.zeros((1, 8))))
    assert alpha is None and y.shape == x.shape
    with pytest.raises(ValueError):
        ScoreFusion(8, 2, rng, mode="sum")


def test_fusion_gradient(rng):
    fusion = ScoreFusion(8, 3, rng)
    x = rng.standard_normal((1, 3, 2, 8))
    features = [rng.standard_normal(x.shape) for _ in range(3)]
    cls = rng.standard_normal((1, 8))
    direction = rng.standard_normal(x.shape)

    def f():
        return _weighted(fusion([Tensor(v) for v in features], Tensor(x), Tensor(cls))[0], direction)

    assert nc.finite_diff_check(f, fusion.parameters()).passed


def test_tij_single_word_and_errors(rng):
    tij = TextInjection(8, 6, 2, rng)
    y = rng.standard_normal((1, 3, 2, 8))
    tau = rng.standard_normal((1, 1, 6))
    out, weights = tij.attend(Tensor(y), Tensor(tau))
    np.testing.assert_allclose(weights.data, 1.0)
    assert out.shape == y.shape
    with pytest.raises(ValueError):
        tij_forward(Tensor(y), np.zeros((1, 0, 6)), tij)
    with pytest.raises(ValueError):
        tij_forward(Tensor(y), tau, tij, mask=np.zeros((1, 1), dtype=bool))


def test_tij_ignores_masked_words(rng):
    tij = TextInjection(8, 6, 2, rng)
    y = Tensor(rng.standard_normal((1, 2, 2, 8)))
    tau = rng.standard_normal((1, 3, 6))
    mask = np.array([[True, True, False]])
    other = tau.copy()
    other[0, 2] = 100.0
    np.testing.assert_allclose(tij_forward(y, tau, tij, mask).data, tij_forward(y, other, tij, mask).data)


def test_tij_gradient(rng):
    tij = TextInjection(8, 6, 2, rng)
    y = rng.standard_normal((1, 2, 2, 8))
    tau = rng.standard_normal((1, 3, 6))
    direction = rng.standard_normal(y.shape)
    assert nc.finite_diff_check(lambda: _weighted(tij(Tensor(y), Tensor(tau)), direction), tij.parameters()).passed


def test_denoiser_output_shapes(toy_model, toy_text, toy_config, rng):
    x_t = rng.standard_normal((2, 8, 4, CHANNELS))
    out = toy_model(x_t, np.array([1, 5]), toy_text)
    assert out.x0_hat.shape == x_t.shape
    assert out.bundle is None
    assert len(out.alphas) == toy_config.model.J
    single = toy_model(x_t[0], 3, null_batch(1, toy_config.model.d_text))
    assert single.x0_hat.shape == (8, 4, CHANNELS)
    with pytest.raises(ShapeMismatchError):
        toy_model(rng.standard_normal((2, 6, 4, CHANNELS)), np.array([1, 1]), toy_text)
    with pytest.raises(ShapeMismatchError):
        toy_model(x_t[:1], np.array([1]), toy_text)


def test_denoiser_train_mode_returns_bundle(toy_model, toy_text, toy_config, rng):
    x_t = rng.standard_normal((2, 8, 4, CHANNELS))
    out = toy_model(x_t, np.array([2, 2]), toy_text, mode="train")
    assert len(out.bundle) == toy_config.model.J
    for tde in out.bundle.tde:
        assert tde.shape == x_t.shape
    inference = toy_model(x_t, np.array([2, 2]), toy_text)
    np.testing.assert_array_equal(out.x0_hat.data, inference.x0_hat.data)


def test_denoiser_parameters_exclude_ccmd(toy_model):
    names = [name for name, _ in toy_model.named_parameters()]
    assert any(name.startswith("ccmd.") for name in names)
    assert len(toy_model.denoiser_parameters()) == sum(not name.startswith("ccmd.") for name in names)


def test_null_condition_ignores_prompt(toy_model, toy_config, rng):
    from tric.core.motion_repr import batch_conditions, toy_text_encode
    x_t = rng.standard_normal((1, 8, 4, CHANNELS))
    d_text = toy_config.model.d_text
    a = batch_conditions([toy_text_encode("walk slow forward", d_text)], null=[True])
    b = batch_conditions([toy_text_encode("jump fast left now", d_text)], null=[True])
    np.testing.assert_allclose(toy_model(x_t, 4, a).x0_hat.data, toy_model(x_t, 4, b).x0_hat.data, atol=1e-12)
