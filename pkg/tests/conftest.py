import numpy as np
import pytest
import torch

from dars.config import train_config_from_dict
from dars.corpus import generate_toy_corpus

# Small model sizes so unit-level training runs in a few seconds.
TINY_MODEL = {
    "rhythm": dict(phoneme_hidden=16, phoneme_layers=1, phoneme_heads=2, phoneme_ffn=32,
                   augmented_hidden=16, augmented_layers=1, augmented_heads=2, augmented_ffn=32,
                   predictor_filter=16),
    "style": dict(ref_channels=16, n_tokens=4, n_heads=2, global_dim=16, local_dim=8,
                  codebook_size=16, align_dim=8),
    "flow": dict(fuse_dim=32, channels=[16, 16], speaker_dim=4, time_dim=16),
}


def tiny_config(**train):
    train.setdefault("epochs", 2)
    return train_config_from_dict({"train": train, "model": TINY_MODEL})


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    return generate_toy_corpus(3, 48, None, tmp_path_factory.mktemp("toy"))


@pytest.fixture(scope="session")
def trained_dir(toy_corpus, tmp_path_factory):
    """A briefly trained ASp checkpoint directory shared by model-level tests."""
    from dars.trainer import train

    out = tmp_path_factory.mktemp("ckpt")
    train(tiny_config(epochs=3), toy_corpus.manifest_path, "asp", out)
    return out / "all"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
