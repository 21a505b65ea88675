"""Labeled tweet datasets: parsing, tokenization, fixed-length sequences and
stratified cross-validation folds."""

import logging
import string
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from .errors import ConfigError, DataError
from .identifiers import make_rng


logger = logging.getLogger(__name__)


CLASS_LABELS = (1, 2, 3)
CLASS_NAMES = {
    1: "personal intake",
    2: "possible intake",
    3: "no intake",
}

DOC_LENGTH = 47
PAD = "<pad>"

PUNCTUATION = frozenset(string.punctuation)
WHOLE_TOKEN_PREFIXES = ("@", "#", "http://", "https://", "www.")


class Example(BaseModel):
    id: str
    label: Optional[int]
    text: str

    class Config:
        allow_mutation = False

    @property
    def labeled(self) -> bool:
        return self.label is not None

    def as_tsv(self) -> str:
        if self.labeled:
            return f"{self.id}\t{self.label}\t{self.text}\n"

        return f"{self.id}\t{self.text}\n"


class TokenSeq(BaseModel):
    tokens: Tuple[str, ...]
    real_length: int

    class Config:
        allow_mutation = False

    @property
    def real_tokens(self) -> Tuple[str, ...]:
        return self.tokens[:self.real_length]


class FoldAssignment(BaseModel):
    fold_of: Tuple[int, ...]
    k: int = 5
    seed: int

    class Config:
        allow_mutation = False

    def heldout_indices(self, fold: int) -> List[int]:
        return [n for n, f in enumerate(self.fold_of) if f == fold]

    def train_indices(self, fold: int) -> List[int]:
        return [n for n, f in enumerate(self.fold_of) if f != fold]

    def fold_counts(self, labels: Sequence[int]) -> Dict[int, List[int]]:
        """Per-class list of example counts in each fold."""

        counts = {label: [0] * self.k for label in CLASS_LABELS}
        for label, fold in zip(labels, self.fold_of):
            counts[label][fold] += 1

        return counts


def parse_label(raw: str, lineno: int) -> int:

    try:
        label = int(raw)
    except ValueError:
        raise DataError(f"invalid label {raw!r} at line {lineno}")

    if label not in CLASS_LABELS:
        raise DataError(f"label out of range at line {lineno}")

    return label


def parse_dataset_text(content: str, labeled: bool, source: str = "<string>") -> List[Example]:

    n_fields = 3 if labeled else 2
    examples = []
    seen_ids = set()

    for lineno, line in enumerate(content.split("\n"), start=1):
        if not line:
            continue

        fields = line.split("\t")
        if len(fields) != n_fields:
            raise DataError(
                f"{source}: expected {n_fields} tab-separated fields, found {len(fields)} at line {lineno}"
            )

        example_id = fields[0]
        if not example_id:
            raise DataError(f"{source}: empty id at line {lineno}")
        if example_id in seen_ids:
            raise DataError(f"{source}: duplicate id {example_id!r} at line {lineno}")
        seen_ids.add(example_id)

        if labeled:
            example = Example(id=example_id, label=parse_label(fields[1], lineno), text=fields[2])
        else:
            example = Example(id=example_id, label=None, text=fields[1])

        examples.append(example)

    return examples


def parse_dataset(fpath: Union[str, Path], labeled: bool) -> List[Example]:
    """Read a tweet TSV, `id<TAB>label<TAB>text` when labeled and `id<TAB>text`
    otherwise. Order is preserved."""

    fpath = Path(fpath)
    try:
        content = fpath.read_bytes().decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"{fpath}: not valid UTF-8 ({e})")

    examples = parse_dataset_text(content, labeled, source=str(fpath))
    logger.info(f"Read {len(examples)} examples from {fpath}")

    return examples


def combine_datasets(*datasets: Sequence[Example]) -> List[Example]:
    """Concatenate datasets in order, e.g. the shared task train and dev sets."""

    combined = []
    seen_ids = set()
    for dataset in datasets:
        for example in dataset:
            if example.id in seen_ids:
                raise DataError(f"duplicate id {example.id!r} across combined datasets")
            seen_ids.add(example.id)
            combined.append(example)

    return combined


def split_punctuation(chunk: str) -> List[str]:

    tokens = []

    start = 0
    while start < len(chunk) and chunk[start] in PUNCTUATION and not chunk[start:].startswith(WHOLE_TOKEN_PREFIXES):
        tokens.append(chunk[start])
        start += 1

    rest = chunk[start:]
    if rest.startswith(WHOLE_TOKEN_PREFIXES):
        tokens.append(rest)
        return tokens

    end = len(rest)
    while end > 0 and rest[end - 1] in PUNCTUATION:
        end -= 1

    if end:
        tokens.append(rest[:end])
    tokens.extend(rest[end:])

    return tokens


def tokenize(text: str) -> List[str]:
    """Lowercase, split on whitespace and detach leading/trailing ASCII
    punctuation, one token per punctuation character. Mentions, hashtags and
    URLs are kept whole. Stopwords are retained."""

    tokens = []
    for chunk in text.lower().split():
        tokens.extend(split_punctuation(chunk))

    return tokens


def pad_or_truncate(tokens: Union[Sequence[str], TokenSeq], length: int = DOC_LENGTH) -> TokenSeq:

    if length < 1:
        raise ConfigError(f"document length must be at least 1, got {length}")

    if isinstance(tokens, TokenSeq):
        real = list(tokens.real_tokens)
    else:
        real = list(tokens)
        while real and real[-1] == PAD:
            real.pop()

    real = real[:length]
    padded = real + [PAD] * (length - len(real))

    return TokenSeq(tokens=tuple(padded), real_length=len(real))


def sequences_for(examples: Sequence[Example], length: int = DOC_LENGTH) -> List[TokenSeq]:

    return [pad_or_truncate(tokenize(example.text), length) for example in examples]


def labels_of(examples: Sequence[Example]) -> List[int]:

    labels = []
    for example in examples:
        if not example.labeled:
            raise DataError(f"example {example.id!r} has no label")
        labels.append(example.label)

    return labels


def stratified_kfold(examples: Sequence[Example], k: int, seed: int) -> FoldAssignment:
    """Shuffle each class with its own seeded substream and deal it round-robin
    across the folds. Each class starts dealing where the previous class
    stopped, so overall fold sizes stay within one of each other as well."""

    if k < 2:
        raise ConfigError(f"fold count must be at least 2, got {k}")

    labels = labels_of(examples)

    by_class = {label: [] for label in CLASS_LABELS}
    for n, label in enumerate(labels):
        by_class[label].append(n)

    for label, members in by_class.items():
        if len(members) < k:
            raise DataError(
                f"class {label} ({CLASS_NAMES[label]}) has {len(members)} examples, fewer than {k} folds"
            )

    fold_of = [-1] * len(labels)
    offset = 0
    for label in CLASS_LABELS:
        members = np.array(by_class[label], dtype=np.int64)
        rng = make_rng(seed, "folds", label)
        shuffled = members[rng.permutation(len(members))]

        for position, n in enumerate(shuffled):
            fold_of[int(n)] = (offset + position) % k
        offset = (offset + len(members)) % k

    assert all(f >= 0 for f in fold_of)

    return FoldAssignment(fold_of=tuple(fold_of), k=k, seed=seed)
