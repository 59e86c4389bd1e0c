import pytest
import torch

from nestterm.config import ModelConfig
from nestterm.corpus import AnnotatedSentence, SplitSpec, load_genia, split_corpus
from nestterm.fixture import fixture_path

torch.set_num_threads(1)

EXAMPLE_TOKENS = ("Mouse", "interleukin-2", "receptor", "alpha", "gene", "expression")
EXAMPLE_SPANS = {(0, 4), (0, 5), (1, 1)}


@pytest.fixture
def example_sentence():
    return AnnotatedSentence(EXAMPLE_TOKENS, EXAMPLE_SPANS)


@pytest.fixture(scope="session")
def fixture_corpus():
    return load_genia(fixture_path())


@pytest.fixture(scope="session")
def fixture_splits(fixture_corpus):
    return split_corpus(fixture_corpus, SplitSpec())


def tiny_config(**kw):
    base = dict(word_embedding_dim=8, char_embedding_dim=4, char_cnn_filters=4, word_lstm_hidden=4,
                word_lstm_layers=1, span_length_dim=3, dropout=0.0, batch_size=20, max_epochs=8,
                stage2_max_epochs=5, early_stop=26, learning_rate=0.01)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def trained_small(fixture_splits):
    """A small model trained on the fixture; shared by ranking/eval/cli tests."""
    from nestterm.model import train
    tr, dv, _ = fixture_splits
    cfg = ModelConfig(word_embedding_dim=32, char_embedding_dim=8, char_cnn_filters=16, word_lstm_hidden=32,
                      word_lstm_layers=1, span_length_dim=8, dropout=0.2, batch_size=10, max_epochs=12,
                      stage2_max_epochs=8)
    return train(tr, dv, cfg)


# acceptance criteria record one line each; printed in the terminal summary
ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
