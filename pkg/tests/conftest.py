import numpy as np
import pytest

from medintake_tools.corpus import labels_of, sequences_for
from medintake_tools.embeddings import embed_sequences, make_table
from medintake_tools.model import HyperParams, LabeledDocs
from medintake_tools.synth import synth_corpus


@pytest.fixture
def toy_hp():
    return HyperParams(
        adam_b2=0.999,
        n_dense_output=8,
        keep_prob=0.9,
        batch_size=10,
        learning_rate=0.01,
        word_embedding="godin",
        n_filters=4,
        filter_sizes=(1, 2, 2, 2, 3)
    )


@pytest.fixture
def fruit_table():
    return make_table("fruit", ["apple", "banana"], np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))


@pytest.fixture(scope="session")
def small_synth():
    return synth_corpus(n_train=60, n_test=30, dim=8, seed=3)


@pytest.fixture
def embed_labeled():
    """Turn labeled examples into LabeledDocs with the given table."""

    def embed(examples, table, length=47):
        docs = embed_sequences(table, sequences_for(examples, length))
        return LabeledDocs(docs=docs, labels=np.array(labels_of(examples), dtype=np.int64))

    return embed
