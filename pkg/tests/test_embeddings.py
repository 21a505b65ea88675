import numpy as np
import pytest

from medintake_tools.corpus import PAD, pad_or_truncate
from medintake_tools.embeddings import (
    embed_sequences,
    load_embeddings,
    load_registry,
    lookup_doc,
    make_table,
    save_embeddings
)
from medintake_tools.errors import ConfigError, DataError


def write_vec(tmp_path, content, name="table.vec"):
    fpath = tmp_path/name
    fpath.write_text(content, encoding="utf-8")
    return fpath


def test_load_embeddings(tmp_path):
    table = load_embeddings(write_vec(tmp_path, "2 3\napple 1.0 0 0\nbanana 0 1.0 0\n"), "fruit")

    assert table.dim == 3
    assert set(table.vocab) == {"apple", "banana"}
    assert table.vectors.dtype == np.float32
    assert np.array_equal(table.vectors[table.vocab["banana"]], [0, 1, 0])


def test_load_embeddings_wrong_dimension(tmp_path):
    with pytest.raises(DataError, match="expected 3 components at line 2"):
        load_embeddings(write_vec(tmp_path, "1 3\napple 1.0 0"), "fruit")


def test_load_embeddings_duplicate_word(tmp_path):
    with pytest.raises(DataError, match="duplicate word 'apple'"):
        load_embeddings(write_vec(tmp_path, "2 3\napple 1 0 0\napple 0 1 0\n"), "fruit")


def test_load_embeddings_bad_values(tmp_path):
    with pytest.raises(DataError, match="non-numeric component at line 3"):
        load_embeddings(write_vec(tmp_path, "2 2\na 1 0\nb x 0\n"), "t")

    with pytest.raises(DataError, match="non-finite"):
        load_embeddings(write_vec(tmp_path, "1 2\na nan 0\n"), "t")


def test_load_embeddings_word_count_mismatch(tmp_path):
    with pytest.raises(DataError, match="declares 3 words, found 2"):
        load_embeddings(write_vec(tmp_path, "3 2\na 1 0\nb 0 1\n"), "t")

    with pytest.raises(DataError, match="extra word at line 3"):
        load_embeddings(write_vec(tmp_path, "1 2\na 1 0\nb 0 1\n"), "t")


def test_embeddings_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    table = make_table("t", ["a", "b", "c"], rng.normal(size=(3, 4)))

    fpath = tmp_path/"t.vec"
    save_embeddings(table, fpath)
    loaded = load_embeddings(fpath, "t")

    assert loaded.vocab == table.vocab
    assert np.array_equal(loaded.vectors, table.vectors)


def test_tables_are_read_only(fruit_table):
    with pytest.raises(ValueError):
        fruit_table.vectors[0, 0] = 5.0


def test_lookup_doc(fruit_table):
    doc = lookup_doc(fruit_table, pad_or_truncate(["apple"]))

    assert doc.values.shape == (47, 3)
    assert np.array_equal(doc.values[0], [1, 0, 0])
    assert not doc.values[1:].any()
    assert doc.real_length == 1


def test_lookup_doc_order(fruit_table):
    doc = lookup_doc(fruit_table, pad_or_truncate(["banana", "apple"]))

    assert np.array_equal(doc.values[:2], [[0, 1, 0], [1, 0, 0]])
    assert not doc.values[2:].any()


def test_lookup_doc_oov_rows_are_zero(fruit_table):
    doc = lookup_doc(fruit_table, pad_or_truncate(["cherry", "durian", PAD.upper()]))

    assert doc.values.shape == (47, 3)
    assert np.abs(doc.values).max() == 0


def test_embed_sequences_matches_lookup(fruit_table):
    seqs = [pad_or_truncate(["apple", "x", "banana"]), pad_or_truncate([])]
    batch = embed_sequences(fruit_table, seqs)

    assert batch.shape == (2, 47, 3)
    for seq, values in zip(seqs, batch):
        assert np.array_equal(values, lookup_doc(fruit_table, seq).values)


def test_registry_dimensions_must_agree(tmp_path):
    paths = {
        "godin": write_vec(tmp_path, "1 2\na 1 0\n", "godin.vec"),
        "shin": write_vec(tmp_path, "1 3\na 1 0 0\n", "shin.vec"),
    }

    with pytest.raises(ConfigError, match="dimension"):
        load_registry(paths)
