# tests/conftest.py
import pytest
import torch

from ccvec.corpus import FileChange, Hunk, PatchChange, build_vocabularies, synthetic_corpus, tokenize_line
from ccvec.train import TrainConfig, load_train_config


def make_patch(message: str, removed=(), added=(), path: str = "src/a.c", id=None) -> PatchChange:
    hunk = Hunk(removed=[tokenize_line(line) for line in removed],
                added=[tokenize_line(line) for line in added])
    return PatchChange.create(message, [FileChange(path=path, hunks=[hunk])], id=id)


@pytest.fixture
def synthetic():
    return synthetic_corpus(8, seed=0)


@pytest.fixture
def vocabs(synthetic):
    return build_vocabularies(synthetic)


@pytest.fixture
def tiny_config() -> TrainConfig:
    """Small enough to train for a few epochs in well under a second."""
    return load_train_config({
        "embed_dim": 4, "gru_dim": 2, "hidden_dim": 4, "dropout_rate": 0.0,
        "batch_size": 4, "epochs": 2, "learning_rate": 1e-2,
        "shape": {"max_files": 2, "max_hunks": 1, "max_lines": 2, "max_words": 6},
    })


@pytest.fixture(autouse=True)
def _single_thread():
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(threads)
