"""Pretrained word embeddings in word2vec text format, and their lookup into
fixed-shape document matrices. Tables are frozen: nothing here is trained."""

import logging
import math
from pathlib import Path
from typing import Dict, Mapping, Sequence, Union

import numpy as np
from pydantic import BaseModel

from .corpus import PAD, TokenSeq
from .errors import ConfigError, DataError


logger = logging.getLogger(__name__)


class EmbeddingTable(BaseModel):
    name: str
    dim: int
    vocab: Dict[str, int]
    vectors: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    def __len__(self):
        return len(self.vocab)


class DocMatrix(BaseModel):
    values: np.ndarray
    real_length: int

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False


def make_table(name: str, words: Sequence[str], vectors: np.ndarray) -> EmbeddingTable:

    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] != len(words) or vectors.shape[1] < 1:
        raise DataError(f"embedding {name}: {len(words)} words do not match vectors of shape {vectors.shape}")

    vocab = {}
    for n, word in enumerate(words):
        if word in vocab:
            raise DataError(f"embedding {name}: duplicate word {word!r}")
        vocab[word] = n

    vectors.flags.writeable = False

    return EmbeddingTable(name=name, dim=vectors.shape[1], vocab=vocab, vectors=vectors)


def parse_header(line: str, fpath) -> tuple:

    parts = line.split()
    try:
        vocab_size, dim = (int(p) for p in parts)
    except ValueError:
        raise DataError(f"{fpath}: header must be '<vocab_size> <dim>' at line 1")

    if vocab_size < 0 or dim < 1:
        raise DataError(f"{fpath}: invalid header {line.strip()!r} at line 1")

    return vocab_size, dim


def load_embeddings(fpath: Union[str, Path], name: str) -> EmbeddingTable:
    """Load a word2vec text file: a `<vocab_size> <dim>` header line, then one
    `word v1 ... v_dim` line per word."""

    fpath = Path(fpath)
    logger.info(f"Loading {name} embeddings from {fpath}")

    with open(fpath, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise DataError(f"{fpath}: empty embedding file")
        vocab_size, dim = parse_header(header, fpath)

        words = []
        vectors = np.zeros((vocab_size, dim), dtype=np.float32)
        seen = set()

        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n").rstrip(" ")
            if not line:
                continue

            parts = line.split(" ")
            word, components = parts[0], parts[1:]

            if len(components) != dim:
                raise DataError(f"{fpath}: expected {dim} components at line {lineno}")
            if len(words) == vocab_size:
                raise DataError(f"{fpath}: more than {vocab_size} words, extra word at line {lineno}")
            if word in seen:
                raise DataError(f"{fpath}: duplicate word {word!r} at line {lineno}")

            try:
                values = [float(c) for c in components]
            except ValueError:
                raise DataError(f"{fpath}: non-numeric component at line {lineno}")
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{fpath}: non-finite component at line {lineno}")

            vectors[len(words)] = values
            words.append(word)
            seen.add(word)

    if len(words) != vocab_size:
        raise DataError(f"{fpath}: header declares {vocab_size} words, found {len(words)}")

    table = make_table(name, words, vectors)
    logger.info(f"Loaded {len(table)} words of dimension {dim} for {name}")

    return table


def save_embeddings(table: EmbeddingTable, fpath: Union[str, Path]):

    words = sorted(table.vocab, key=table.vocab.get)
    with open(fpath, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(words)} {table.dim}\n")
        for word in words:
            row = table.vectors[table.vocab[word]]
            fh.write(word + " " + " ".join(repr(v) for v in row.tolist()) + "\n")


def load_registry(paths: Mapping[str, Union[str, Path]]) -> Dict[str, EmbeddingTable]:
    """Load every table of a `name -> path` registry; all must share one dimension."""

    tables = {name: load_embeddings(fpath, name) for name, fpath in sorted(paths.items())}

    dims = {table.dim for table in tables.values()}
    if len(dims) > 1:
        raise ConfigError(f"embedding tables disagree on dimension: {sorted(dims)}")

    return tables


def token_indices(table: EmbeddingTable, seq: TokenSeq) -> np.ndarray:

    oov = len(table.vocab)
    indices = np.full(len(seq.tokens), oov, dtype=np.int64)
    for n, token in enumerate(seq.real_tokens):
        if token != PAD:
            indices[n] = table.vocab.get(token, oov)

    return indices


def gather_rows(table: EmbeddingTable, indices: np.ndarray) -> np.ndarray:
    """Vectors for an index array; the out-of-range index len(vocab) gives zeros."""

    known = indices < len(table.vocab)
    values = np.zeros(indices.shape + (table.dim,), dtype=np.float32)
    values[known] = table.vectors[indices[known]]

    return values


def lookup_doc(table: EmbeddingTable, seq: TokenSeq) -> DocMatrix:
    """Stack the vectors of seq's tokens; PAD and unknown words give zero rows."""

    values = gather_rows(table, token_indices(table, seq))

    return DocMatrix(values=values, real_length=seq.real_length)


def embed_sequences(table: EmbeddingTable, seqs: Sequence[TokenSeq]) -> np.ndarray:
    """Batch form of lookup_doc, shape (n, length, dim)."""

    if not seqs:
        return np.zeros((0, 0, table.dim), dtype=np.float32)

    indices = np.stack([token_indices(table, seq) for seq in seqs])

    return gather_rows(table, indices)
