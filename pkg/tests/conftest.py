import pytest
from hypothesis import settings

from rankvocab import corpus as C
from rankvocab import model as M
from rankvocab import synthetic as S

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synth():
    """Processed synthetic corpus, its stats/candidates, and matching embeddings."""
    raw = S.synthetic_corpus(n_docs=200, seed=0)
    table = S.synthetic_embeddings(dim=16, seed=0)
    processed, stats, candidates = C.preprocess(raw, C.load_stopwords(), 1)
    return processed, stats, candidates, table


def small_config(vocab_size, num_classes=2, **kw):
    base = dict(embed_dim=16, maxlen=20, filter_sizes=(2, 3, 4), filters_per_size=16, attention_dim=8)
    base.update(kw)
    return M.ModelConfig(vocab_size=vocab_size, num_classes=num_classes, **base)
