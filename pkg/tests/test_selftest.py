import pytest

from tric.commands.selftest_command import SUITES, gradient_toy_config, run_suites, selftest_main_function


@pytest.mark.parametrize("name", ["transforms", "hfa_identity", "fusion_simplex", "diffusion", "ccmd", "metrics"])
def test_invariant_suite_passes(name):
    [result] = run_suites([name], trials=2)
    assert result.passed, result.detail
    assert result.name == name


def test_ablation_suite_covers_every_variant(monkeypatch):
    monkeypatch.setenv("TRIC_SELFTEST_TRIALS", "1")
    assert selftest_main_function(ablations_only=True)


def test_failing_suite_is_reported(monkeypatch):
    def broken(trials):
        raise RuntimeError("boom")

    monkeypatch.setitem(SUITES, "broken", broken)
    [result] = run_suites(["broken"], trials=1)
    assert not result.passed
    assert "RuntimeError: boom" in result.detail


def test_gradient_toy_config_overrides():
    config = gradient_toy_config(**{"diffusion.T": "3"})
    assert config.diffusion.T == 3 and config.model.D == 8 and config.optim.dtype == "float64"


@pytest.mark.slow
def test_gradient_suite_passes():
    [result] = run_suites(["gradients"], trials=1)
    assert result.passed, result.detail
