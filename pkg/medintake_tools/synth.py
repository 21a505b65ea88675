"""A small keyword-separable corpus with toy embeddings, for smoke tests and
desk-scale runs of the whole pipeline."""

import logging
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
from pydantic import BaseModel

from .corpus import CLASS_LABELS, Example
from .embeddings import EmbeddingTable, make_table, save_embeddings
from .identifiers import make_rng
from .io import write_dataset


logger = logging.getLogger(__name__)


# Training-set class counts of the shared task
CLASS_WEIGHTS = {1: 1847, 2: 3027, 3: 4789}

N_FILLER_WORDS = 60
N_KEYWORDS = 5
KEYWORD_SCALE = 2.0
FILLER_SCALE = 0.1
PUNCTUATION_MARKS = (".", ",", "!", "?")
TABLE_NAMES = ("godin", "shin")


class SynthCorpus(BaseModel):
    train: List[Example]
    test: List[Example]
    tables: Dict[str, EmbeddingTable]

    class Config:
        arbitrary_types_allowed = True


def filler_words() -> List[str]:
    return [f"w{n}" for n in range(N_FILLER_WORDS)]


def class_keywords(label: int) -> List[str]:
    letter = "abc"[label - 1]
    return [f"kw{letter}{n}" for n in range(N_KEYWORDS)]


def class_counts(n: int) -> Dict[int, int]:
    """Split n examples in the shared-task proportions, by largest remainder."""

    total = sum(CLASS_WEIGHTS.values())
    exact = {label: n * weight / total for label, weight in CLASS_WEIGHTS.items()}
    counts = {label: int(np.floor(value)) for label, value in exact.items()}

    by_remainder = sorted(CLASS_LABELS, key=lambda label: (-(exact[label] - counts[label]), label))
    for label in by_remainder[:n - sum(counts.values())]:
        counts[label] += 1

    return counts


def synth_text(label: int, rng: np.random.Generator) -> str:

    fillers = filler_words()
    words = [fillers[i] for i in rng.integers(N_FILLER_WORDS, size=int(rng.integers(4, 21)))]

    keywords = class_keywords(label)
    for _ in range(int(rng.integers(1, 4))):
        position = int(rng.integers(len(words) + 1))
        words.insert(position, keywords[int(rng.integers(N_KEYWORDS))])

    if rng.random() < 0.3:
        words[int(rng.integers(len(words)))] += PUNCTUATION_MARKS[int(rng.integers(len(PUNCTUATION_MARKS)))]
    if rng.random() < 0.3:
        words.insert(0, f"@user{int(rng.integers(100))}")
    if rng.random() < 0.2:
        words.append(f"http://t.co/x{int(rng.integers(1000))}")

    return " ".join(words)


def synth_examples(n: int, seed: int, split: str) -> List[Example]:

    rng = make_rng(seed, "synth", split)
    labels = np.concatenate([np.full(count, label) for label, count in class_counts(n).items()])
    labels = labels[rng.permutation(n)]

    return [
        Example(id=f"{split}-{i:04d}", label=int(label), text=synth_text(int(label), rng))
        for i, label in enumerate(labels)
    ]


def synth_table(name: str, dim: int, seed: int) -> EmbeddingTable:
    """Each class's keywords cluster around their own axis; filler and
    punctuation vectors stay near the origin."""

    assert dim >= len(CLASS_LABELS), "one axis per class"

    rng = make_rng(seed, "synth", "embedding", name)
    axes = rng.permutation(dim)[:len(CLASS_LABELS)]

    words, vectors = [], []
    for label, axis in zip(CLASS_LABELS, axes):
        for word in class_keywords(label):
            vector = rng.normal(0.0, FILLER_SCALE, dim)
            vector[axis] += KEYWORD_SCALE
            words.append(word)
            vectors.append(vector)

    for word in filler_words() + list(PUNCTUATION_MARKS):
        words.append(word)
        vectors.append(rng.normal(0.0, FILLER_SCALE, dim))

    return make_table(name, words, np.array(vectors))


def synth_corpus(n_train: int = 600, n_test: int = 300, dim: int = 16, seed: int = 0) -> SynthCorpus:

    return SynthCorpus(
        train=synth_examples(n_train, seed, "train"),
        test=synth_examples(n_test, seed, "test"),
        tables={name: synth_table(name, dim, seed) for name in TABLE_NAMES}
    )


def write_synth(out_dirpath: Union[str, Path], corpus: SynthCorpus) -> List[Path]:

    out_dirpath = Path(out_dirpath)
    out_dirpath.mkdir(parents=True, exist_ok=True)

    fpaths = [out_dirpath/name for name in ("train.tsv", "test.tsv", "test_unlabeled.tsv")]
    write_dataset(corpus.train, fpaths[0])
    write_dataset(corpus.test, fpaths[1])
    write_dataset([Example(id=e.id, label=None, text=e.text) for e in corpus.test], fpaths[2])

    for name, table in corpus.tables.items():
        fpath = out_dirpath/f"{name}.vec"
        save_embeddings(table, fpath)
        fpaths.append(fpath)

    logger.info(f"Wrote synthetic corpus ({len(corpus.train)} train, {len(corpus.test)} test) to {out_dirpath}")

    return fpaths
