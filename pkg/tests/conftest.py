import numpy as np
import pytest

from tric.commands.runtime import build_denoiser
from tric.core.motion_repr import batch_conditions, toy_text_encode
from tric.utility.utils import build_config

TOY = {
    "model.J": "2", "model.D": "8", "model.M": "4", "model.heads": "2", "model.d_text": "8",
    "model.s": "2", "model.gn_groups": "4", "model.gcn_layers": "2", "data.n_raw": "8",
    "diffusion.T": "5", "optim.batch": "2", "optim.iters": "3", "optim.log_every": "1",
    "optim.checkpoint_every": "2", "data.corpus_size": "8",
}


def toy_pairs(**overrides):
    pairs = dict(TOY)
    pairs.update(overrides)
    return pairs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_config():
    return build_config(TOY.items())


@pytest.fixture
def toy_model(toy_config):
    return build_denoiser(toy_config)


@pytest.fixture
def toy_text(toy_config):
    prompts = ["walk slow forward", "kick fast right"]
    return batch_conditions([toy_text_encode(p, toy_config.model.d_text) for p in prompts])
