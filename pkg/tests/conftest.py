import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from annotopic import topic_models as tm
from annotopic.corpus import Corpus, bow_counts, build_vocabulary, make_document, tfidf_features

THEMES = {
    "Economy": ["tax", "revenue", "income", "budget", "fiscal"],
    "Education": ["school", "student", "teacher", "tuition", "campus"],
    "Environment": ["water", "river", "fish", "habitat", "wetland"],
}


def build_theme_corpus(docs_per_theme=8, words_per_doc=12, seed=0):
    """Small corpus with three clearly separated themes and gold labels."""
    import numpy as np

    rng = np.random.default_rng(seed)
    docs = []
    i = 0
    for major, words in THEMES.items():
        for j in range(docs_per_theme):
            tokens = [words[int(k)] for k in rng.integers(0, len(words), words_per_doc)]
            # one shared filler word so themes overlap a little
            tokens.append("section")
            docs.append(
                make_document(
                    f"{major[:3].lower()}{j:02d}",
                    " ".join(tokens),
                    gold_major=major,
                    gold_sub=f"{major}_{j % 2}",
                )
            )
            i += 1
    return Corpus(docs)


@pytest.fixture(scope="session")
def theme_corpus():
    return build_theme_corpus()


@pytest.fixture(scope="session")
def theme_artifacts(theme_corpus):
    vocab = build_vocabulary(theme_corpus, prune_threshold=2, max_doc_fraction=0.9)
    tfidf = tfidf_features(theme_corpus, vocab)
    bow = bow_counts(theme_corpus, vocab)
    return theme_corpus, vocab, tfidf, bow


@pytest.fixture(scope="session")
def theme_lda(theme_artifacts):
    _, vocab, _, bow = theme_artifacts
    return tm.train_lda(
        bow, n_topics=6, iterations=150, seed=7, terms=vocab.terms
    )


@pytest.fixture(scope="session")
def theme_slda(theme_artifacts):
    _, vocab, _, bow = theme_artifacts
    import numpy as np

    responses = np.zeros((bow.shape[0], 0), dtype=np.int8)
    model, state = tm.train_slda(
        bow, responses, [], n_topics=6, iterations=150, seed=7, terms=vocab.terms
    )
    return model, state


class SteppingClock:
    """Deterministic clock advancing a fixed step per call."""

    def __init__(self, step_seconds=30.0, start=None):
        self.now = start or datetime(2024, 1, 1, tzinfo=timezone.utc)
        self.step = timedelta(seconds=step_seconds)

    def __call__(self):
        current = self.now
        self.now = self.now + self.step
        return current


@pytest.fixture
def stepping_clock():
    return SteppingClock()
