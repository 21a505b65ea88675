"""Plain-file artifacts: dataset, prediction and out-of-fold TSVs, metrics
JSON and the layout of a search run directory."""

import shutil
import logging
import contextlib
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .corpus import CLASS_LABELS, Example
from .errors import DataError


logger = logging.getLogger(__name__)


PathLike = Union[str, Path]


class RunLayout:
    """Where a search run keeps its artifacts::

        run/manifest.json
        run/leaderboard.csv
        run/trials/<id>/fold<i>.scnn
        run/trials/<id>/oof.tsv
    """

    def __init__(self, run_dirpath: PathLike):
        self.root = Path(run_dirpath)

    @property
    def manifest(self) -> Path:
        return self.root/"manifest.json"

    @property
    def leaderboard(self) -> Path:
        return self.root/"leaderboard.csv"

    def trial_dirpath(self, trial_id: int) -> Path:
        return self.root/"trials"/str(trial_id)

    def model_fpath(self, trial_id: int, fold: int) -> Path:
        return self.trial_dirpath(trial_id)/f"fold{fold}.scnn"

    def oof_fpath(self, trial_id: int) -> Path:
        return self.trial_dirpath(trial_id)/"oof.tsv"


def check_tsv_field(value: str, what: str, example_id: str):

    if "\t" in value or "\n" in value:
        raise DataError(f"{what} of example {example_id!r} contains a TAB or line feed")


def write_dataset(examples: Sequence[Example], fpath: PathLike):
    """Inverse of parse_dataset. Everything is checked before the file is opened."""

    kinds = {example.labeled for example in examples}
    if len(kinds) > 1:
        raise DataError("cannot write labeled and unlabeled examples to one file")

    for example in examples:
        check_tsv_field(example.id, "id", example.id)
        check_tsv_field(example.text, "text", example.id)
        if not example.id:
            raise DataError("cannot write an example with an empty id")

    with open(fpath, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(example.as_tsv() for example in examples))

    logger.info(f"Wrote {len(examples)} examples to {fpath}")


def format_prob(p: float) -> str:
    return f"{p:.6f}"


def write_predictions(ids: Sequence[str], probs: np.ndarray, labels: Sequence[int], fpath: PathLike):
    """`id<TAB>pred<TAB>p1<TAB>p2<TAB>p3`, probabilities to 6 decimals, input order."""

    with open(fpath, "w", encoding="utf-8", newline="\n") as fh:
        for example_id, label, row in zip(ids, labels, probs):
            fh.write("\t".join([example_id, str(int(label))] + [format_prob(p) for p in row]) + "\n")

    logger.info(f"Wrote {len(ids)} predictions to {fpath}")


def read_predictions(fpath: PathLike) -> List[Tuple[str, int]]:
    """(id, predicted label) pairs; probability columns are optional."""

    predictions = []
    first_seen = {}
    content = Path(fpath).read_text(encoding="utf-8")
    for lineno, line in enumerate(content.split("\n"), start=1):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 5):
            raise DataError(f"{fpath}: expected 2 or 5 fields at line {lineno}")
        try:
            label = int(fields[1])
        except ValueError:
            raise DataError(f"{fpath}: invalid label {fields[1]!r} at line {lineno}")
        if label not in CLASS_LABELS:
            raise DataError(f"{fpath}: label out of range at line {lineno}")
        if fields[0] in first_seen:
            raise DataError(
                f"{fpath}: duplicate id {fields[0]!r} at line {lineno}, first seen at line {first_seen[fields[0]]}"
            )
        first_seen[fields[0]] = lineno
        predictions.append((fields[0], label))

    return predictions


def write_metrics(report, fpath: PathLike):

    Path(fpath).write_text(report.as_json(), encoding="utf-8")
    logger.info(f"Wrote metrics to {fpath}")


OOF_COLUMNS = ["id", "gold", "fold", "p1", "p2", "p3"]


def write_oof(fpath: PathLike, ids: Sequence[str], gold: Sequence[int], folds: Sequence[int], probs: np.ndarray):
    """Out-of-fold predictions at full precision, so scores can be recomputed."""

    df = pd.DataFrame({
        "id": list(ids),
        "gold": [int(g) for g in gold],
        "fold": [int(f) for f in folds],
        "p1": probs[:, 0].astype(np.float64),
        "p2": probs[:, 1].astype(np.float64),
        "p3": probs[:, 2].astype(np.float64),
    }, columns=OOF_COLUMNS)

    df.to_csv(fpath, sep="\t", index=False, float_format="%.17g", lineterminator="\n")


def read_oof(fpath: PathLike) -> pd.DataFrame:

    try:
        df = pd.read_csv(fpath, sep="\t", dtype={"id": str}, keep_default_na=False, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"{fpath}: unreadable out-of-fold file ({e})")

    if list(df.columns) != OOF_COLUMNS:
        raise DataError(f"{fpath}: expected columns {OOF_COLUMNS}, found {list(df.columns)}")

    return df


@contextlib.contextmanager
def removing_on_failure(fpaths: Iterable[PathLike]):
    """Delete the listed outputs that did not exist beforehand if the body raises."""

    fpaths = [Path(p) for p in fpaths]
    existed = {p for p in fpaths if p.exists()}

    try:
        yield
    except BaseException:
        for fpath in fpaths:
            if fpath in existed or not fpath.exists():
                continue
            logger.info(f"Removing partial output {fpath}")
            if fpath.is_dir():
                shutil.rmtree(fpath)
            else:
                fpath.unlink()
        raise

