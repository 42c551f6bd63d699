import time

import pytest

from gapdner.data import AnnotatedExample, EntityMention, LabelSet, Sentence

PAIN_TOKENS = ("severe", "joint", ",", "shoulder", "and", "upper", "body", "pain")
PAIN_MENTIONS = [
    EntityMention("ADE", ((0, 1), (7, 7))),  # severe joint pain
    EntityMention("ADE", ((0, 0), (3, 3), (7, 7))),  # severe shoulder pain
    EntityMention("ADE", ((0, 0), (5, 7))),  # severe upper body pain
]


@pytest.fixture
def pain():
    return AnnotatedExample(Sentence(PAIN_TOKENS, "pain"), PAIN_MENTIONS)


@pytest.fixture
def ade_labels():
    return LabelSet(("ADE",))


# the overfit experiment: 50 templated sentences, train = dev, seed 0
OVERFIT_MODEL = {"embed_dim": 32, "lstm_hidden": 16, "dropout_rate": 0.5}
OVERFIT_EPOCHS = 200


def run_overfit(checkpoint=None):
    from gapdner.synthetic import template_corpus
    from gapdner.trainer import TrainConfig, train

    corpus = template_corpus(50, seed=0)
    start = time.perf_counter()
    report = train(corpus, corpus, OVERFIT_MODEL,
                   TrainConfig(epochs=OVERFIT_EPOCHS, batch_size=8, learning_rate=1e-3, seed=0),
                   checkpoint=checkpoint)
    return corpus, report, time.perf_counter() - start


@pytest.fixture(scope="session")
def overfit(tmp_path_factory):
    """(corpus, report, seconds, checkpoint path), trained once per session."""
    ckpt = tmp_path_factory.mktemp("overfit") / "first.ckpt"
    corpus, report, seconds = run_overfit(ckpt)
    return corpus, report, seconds, ckpt


# acceptance lines are collected here and echoed in the terminal summary,
# so they show up in `pytest -v` output without `-s`
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
