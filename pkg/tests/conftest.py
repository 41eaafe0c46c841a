import pytest
import yaml

from xfer.config import Config
from xfer.harness import HarnessSettings, LanguageSettings
from xfer.embeddings import SgnsConfig
from xfer.model import ModelConfig, init_model
from xfer.pretraining import PretrainConfig
from xfer.tokenizer import train_vocab
from xfer.transfer import FineTuneConfig

CORPUS = [
    "the cat sat on the mat",
    "the dog sat on the log",
    "a cat and a dog",
    "the mat and the log",
    "cats and dogs sat",
]


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training runs, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def corpus():
    return list(CORPUS)


@pytest.fixture
def vocab(corpus):
    return train_vocab(corpus, 40)


@pytest.fixture
def tiny_config(vocab):
    return ModelConfig(vocab_size=len(vocab), d_model=8, n_layers=1, n_heads=2, d_ff=16, max_seq_len=16, dropout=0.0)


@pytest.fixture
def tiny_params(tiny_config, vocab):
    params = init_model(tiny_config, seed=0)
    return params.replace(params.tensors, vocab_hash=vocab.hash)


@pytest.fixture
def tiny_settings():
    """Harness settings small enough for a seconds-long grid"""
    return HarnessSettings(
        model_overrides=dict(d_model=8, n_layers=1, n_heads=2, d_ff=16, max_seq_len=32, dropout=0.0),
        source_vocab_size=120,
        target_vocab_size=120,
        sgns=SgnsConfig(window=2, negatives=2, epochs=1),
        pretrain=PretrainConfig(steps=2, batch_size=4),
        finetune=FineTuneConfig(lr=1e-3, batch_size=8, max_len=32, epochs=1),
        language=LanguageSettings(lexicon_size=16, corpus_size=40, dataset_size=60),
        n_dev=10,
        n_test=20,
    )


SMALL_CONFIG = {
    "model": {"d_model": 8, "n_layers": 1, "n_heads": 2, "d_ff": 16, "max_seq_len": 32, "dropout": 0.0},
    "tokenizer": {"vocab_size": 120},
    "embeddings": {"window": 2, "negatives": 2, "epochs": 1},
    "pretrain": {"steps": 2, "batch_size": 4},
    "finetune": {"batch_size": 8, "max_len": 32, "epochs": 1},
    "harness": {
        "seeds": [0],
        "n_dev": 10,
        "n_test": 20,
        "finetune_epochs": 1,
        "language": {"lexicon_size": 16, "corpus_size": 40, "dataset_size": 60},
    },
}


@pytest.fixture
def config_file(tmp_path):
    """A small YAML config in its own directory"""
    path = tmp_path / "config" / "config.yaml"
    path.parent.mkdir()
    path.write_text(yaml.safe_dump(SMALL_CONFIG))
    return path


@pytest.fixture
def small_config(config_file):
    return Config(str(config_file))
