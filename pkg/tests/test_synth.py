import numpy as np

from medintake_tools.corpus import labels_of, parse_dataset
from medintake_tools.embeddings import load_embeddings
from medintake_tools.synth import class_counts, class_keywords, synth_corpus, write_synth


def test_class_counts():
    assert class_counts(9663) == {1: 1847, 2: 3027, 3: 4789}
    assert sum(class_counts(600).values()) == 600
    assert sum(class_counts(7).values()) == 7


def test_corpus_is_deterministic(small_synth):
    again = synth_corpus(n_train=60, n_test=30, dim=8, seed=3)

    assert again.train == small_synth.train
    assert again.test == small_synth.test
    for name, table in small_synth.tables.items():
        assert np.array_equal(again.tables[name].vectors, table.vectors)


def test_every_text_carries_a_class_keyword(small_synth):
    for example in small_synth.train:
        assert any(kw in example.text.split() for kw in class_keywords(example.label))


def test_label_counts(small_synth):
    labels = labels_of(small_synth.train)

    assert {c: labels.count(c) for c in (1, 2, 3)} == class_counts(60)


def test_tables_differ_by_name(small_synth):
    godin, shin = small_synth.tables["godin"], small_synth.tables["shin"]

    assert godin.vocab == shin.vocab
    assert not np.array_equal(godin.vectors, shin.vectors)


def test_write_synth_round_trip(tmp_path, small_synth):
    write_synth(tmp_path, small_synth)

    assert parse_dataset(tmp_path/"train.tsv", labeled=True) == small_synth.train
    unlabeled = parse_dataset(tmp_path/"test_unlabeled.tsv", labeled=False)
    assert [e.id for e in unlabeled] == [e.id for e in small_synth.test]
    assert all(e.label is None for e in unlabeled)

    table = load_embeddings(tmp_path/"godin.vec", "godin")
    assert np.array_equal(table.vectors, small_synth.tables["godin"].vectors)
