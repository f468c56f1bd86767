import numpy as np
import pytest

from ablpath.classifier import LinearSoftmaxClassifier, MLPClassifier, TrainingConfig, train_reference_model
from ablpath.corpus import generate_blob_corpus

TRAIN_SEED = 0
TRAIN_SIZE = 12000
EVAL_SEED = 1001


@pytest.fixture(scope="session")
def reference_model():
    corpus = generate_blob_corpus(TRAIN_SEED, TRAIN_SIZE)
    model, report = train_reference_model(corpus, TrainingConfig(seed=TRAIN_SEED))
    assert report.accuracy >= 0.90
    return model


@pytest.fixture(scope="session")
def eval_corpus():
    return generate_blob_corpus(EVAL_SEED, 100)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_mlp():
    rng = np.random.default_rng(3)
    return MLPClassifier.init_random((6, 5, 2), hidden=7, n_classes=3, rng=rng)


@pytest.fixture
def random_linear():
    rng = np.random.default_rng(4)
    return LinearSoftmaxClassifier(rng.standard_normal((6 * 5 * 2, 3)) * 0.3, rng.standard_normal(3) * 0.1,
                                   (6, 5, 2))


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
