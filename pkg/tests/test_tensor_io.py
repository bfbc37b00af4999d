import numpy as np
import pytest

from tric.core.motion_repr import CorpusError, synth_dataset
from tric.utility.run_manager import LOSS_COLUMNS, RunManager
from tric.utility.tensor_io import (read_corpus, read_skeleton, read_tensor, write_corpus, write_skeleton,
                                   write_tensor)
from tric.utility.utils import build_config


def test_tensor_file_layout_and_values(tmp_path, rng):
    array = rng.standard_normal((3, 2, 4))
    path = str(tmp_path / "x.motion")
    write_tensor(path, array)
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[:2] == ["TENSOR v1", "3 2 4"]
    assert len(lines) == 2 + 6
    np.testing.assert_allclose(read_tensor(path), array, rtol=1e-8)


@pytest.mark.parametrize("content", [
    "TENSOR v2\n1\n0\n",
    "TENSOR v1\n2 2\n1 2\n3\n",
    "TENSOR v1\n0 2\n",
    "TENSOR v1\n2\n1 2 3\n",
])
def test_malformed_tensor_files(tmp_path, content):
    path = tmp_path / "bad.motion"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ValueError):
        read_tensor(str(path))


def test_skeleton_file(tmp_path):
    path = str(tmp_path / "body.skel")
    write_skeleton(path, [(0, 1), (1, 2)])
    assert read_skeleton(path) == [(0, 1), (1, 2)]
    bad = tmp_path / "bad.skel"
    bad.write_text("# comment\n0 1 2\n", encoding="utf-8")
    with pytest.raises(ValueError, match="line 2"):
        read_skeleton(str(bad))


def test_corpus_directory(tmp_path):
    corpus = synth_dataset(0, 3, 4, 8)
    write_corpus(str(tmp_path / "corpus"), corpus)
    loaded = read_corpus(str(tmp_path / "corpus"))
    assert [p for p, _ in loaded] == [p for p, _ in corpus]
    np.testing.assert_allclose(loaded[2][1], corpus[2][1], rtol=1e-8, atol=1e-12)
    with pytest.raises(CorpusError):
        read_corpus(str(tmp_path / "missing"))
    (tmp_path / "empty").mkdir()
    with pytest.raises(CorpusError):
        read_corpus(str(tmp_path / "empty"))
    (tmp_path / "corpus" / "00001.txt").unlink()
    with pytest.raises(CorpusError, match="no prompt"):
        read_corpus(str(tmp_path / "corpus"))


def test_checkpoint_restores_config_and_state(tmp_path, rng):
    config = build_config([("model.J", "2"), ("optim.lr", "0.0003"), ("ccmd.placement", "post")])
    state = {"input_proj.weight": rng.standard_normal((12, 8)), "null_cls": rng.standard_normal(8)}
    manager = RunManager(str(tmp_path / "run"))
    path = manager.save_checkpoint(config, state)
    restored, loaded = RunManager.load_checkpoint(path)
    assert restored == config
    assert list(loaded) == list(state)
    for name, value in state.items():
        np.testing.assert_allclose(loaded[name], value, rtol=1e-8)
    (tmp_path / "bogus.tric").write_text("NOT A CHECKPOINT\n", encoding="utf-8")
    with pytest.raises(ValueError):
        RunManager.load_checkpoint(str(tmp_path / "bogus.tric"))


def test_loss_log_header_and_rows(tmp_path):
    manager = RunManager(str(tmp_path))
    path = manager.open_loss_log()
    manager.log_losses(1, dict(zip(LOSS_COLUMNS[1:], (3.0, 1.25, 1.0, 0.0, 0.025))))
    manager.close_loss_log()
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines == [",".join(LOSS_COLUMNS), "1,3.0,1.25,1.0,0.0,0.025"]
    with pytest.raises(RuntimeError):
        manager.log_losses(2, {})


def test_trajectories_and_diagnostics(tmp_path, rng):
    manager = RunManager(str(tmp_path))
    motion = rng.standard_normal((3, 2, 12))
    lines = open(manager.write_trajectories("a.xy", motion), encoding="utf-8").read().splitlines()
    assert lines[0] == "# joint 0" and lines[4] == "# joint 1"
    assert lines[1].split()[0] == "0" and len(lines) == 8
    directory = manager.dump_diagnostics(7, {"x0": motion, "prompts": np.array(["walk slow forward"])})
    assert directory.endswith("iter_000007")
    assert (tmp_path / "diagnostics" / "iter_000007" / "x0.motion").exists()
    assert (tmp_path / "diagnostics" / "iter_000007" / "prompts.txt").read_text() == "walk slow forward\n"
