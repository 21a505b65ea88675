"""Random search over shallow-CNN hyperparameters.

Each trial trains a fold ensemble for one sampled configuration. Trials are
independent: a trial's result depends only on its configuration and its seed
substream, so the leaderboard does not depend on how many worker processes
ran the search."""

import json
import time
import logging
import concurrent.futures
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel
from ruamel.yaml import YAML

from .corpus import FoldAssignment
from .ensemble import (
    FoldEnsemble,
    StackedEnsemble,
    average_probs,
    check_fold_count,
    ensemble_predict,
    recomputed_cv_score,
    stack_top_k,
    train_fold_ensemble
)
from .errors import ConfigError, DataError
from .identifiers import canonical_json, config_key, make_rng, space_descriptor, substream_seed
from .io import RunLayout, write_oof
from .metrics import confusion, labels_from_probs, micro_prf_12
from .model import STANDARD_DOMAINS, HyperParams, LabeledDocs, TrainSchedule, TrainedModel, load_model, save_model


logger = logging.getLogger(__name__)


RUN_FORMAT_VERSION = 1
FIELD_ORDER = list(HyperParams.__fields__)
LEADERBOARD_COLUMNS = ["trial_id", "cv_score", "status", "wall_time_s"] + FIELD_ORDER
DEFAULT_REPORT_K = (3, 10, 20)


class SearchSpace(BaseModel):
    domains: Dict[str, list]

    @property
    def size(self) -> int:
        return int(np.prod([len(self.domains[name]) for name in FIELD_ORDER], dtype=np.int64))

    @property
    def descriptor(self) -> str:
        return space_descriptor(self.domains)

    @property
    def is_standard_space(self) -> bool:
        return canonical_json(self.domains) == canonical_json(STANDARD_DOMAINS)

    def within_standard_space(self) -> bool:
        return all(
            all(value in STANDARD_DOMAINS[name] for value in values)
            for name, values in self.domains.items()
        )


STANDARD_SPACE = SearchSpace(domains=STANDARD_DOMAINS)


def domain_key(name: str, value) -> str:
    """Text under which two domain values count as the same, so 100 and 100.0 collide."""

    if isinstance(value, (str, list)):
        return canonical_json(value)
    try:
        return repr(float(value))
    except (TypeError, ValueError):
        raise ConfigError(f"search space field {name} has invalid value {value!r}")


def make_space(domains: dict, restricted: bool = True) -> SearchSpace:

    missing = [name for name in FIELD_ORDER if name not in domains]
    extra = [name for name in domains if name not in FIELD_ORDER]
    if missing or extra:
        raise ConfigError(f"search space fields differ from {FIELD_ORDER}: missing {missing}, unknown {extra}")

    normalised = {}
    for name in FIELD_ORDER:
        values = domains[name]
        if not isinstance(values, list) or not values:
            raise ConfigError(f"search space field {name} must be a non-empty list")
        if name == "filter_sizes":
            values = [[int(h) for h in sizes] for sizes in values]
        keys = [domain_key(name, value) for value in values]
        if len(set(keys)) != len(keys):
            repeated = sorted({key for key in keys if keys.count(key) > 1})
            raise ConfigError(f"search space field {name} repeats values {', '.join(repeated)}")
        normalised[name] = values

    space = SearchSpace(domains=normalised)
    if restricted and not space.within_standard_space():
        raise ConfigError("search space goes beyond the standard ranges; pass --unrestricted-space to allow it")

    return space


def load_space(fpath: Union[str, Path], restricted: bool = True) -> SearchSpace:
    """A YAML file mapping every hyperparameter name to its list of values."""

    yaml = YAML(typ="safe")
    with open(fpath) as fh:
        domains = yaml.load(fh)

    if not isinstance(domains, dict):
        raise ConfigError(f"{fpath}: expected a mapping of hyperparameter names to value lists")

    return make_space(domains, restricted)


def sample_config(space: SearchSpace, rng: np.random.Generator, seen: Optional[Set[str]] = None) -> HyperParams:
    """Draw each field uniformly and independently, in field order, redrawing
    the whole configuration while it is already in seen. seen is not updated."""

    if seen is not None and len(seen) >= space.size:
        raise ConfigError(f"search space exhausted: all {space.size} configurations already sampled")

    while True:
        values = {}
        for name in FIELD_ORDER:
            domain = space.domains[name]
            values[name] = domain[int(rng.integers(len(domain)))]
        hp = HyperParams(**values)

        if seen is None or config_key(hp) not in seen:
            return hp


def sample_configs(space: SearchSpace, n_trials: int, seed: int) -> List[HyperParams]:

    rng = make_rng(seed, "sampler")
    seen = set()
    configs = []
    for _ in range(n_trials):
        hp = sample_config(space, rng, seen)
        seen.add(config_key(hp))
        configs.append(hp)

    return configs


class TrialRecord(BaseModel):
    trial_id: int
    hp: HyperParams
    cv_score: Optional[float]
    status: str = "ok"
    error: Optional[str]
    wall_time: Optional[float]
    model_paths: List[str] = []
    oof_path: Optional[str]

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def record_key(record: TrialRecord):
    score = record.cv_score if record.ok and record.cv_score is not None else -np.inf
    return (-score, record.trial_id)


class Leaderboard(BaseModel):
    trials: List[TrialRecord]

    @classmethod
    def from_records(cls, records: Iterable[TrialRecord]) -> "Leaderboard":
        return cls(trials=sorted(records, key=record_key))

    @property
    def completed(self) -> List[TrialRecord]:
        return [record for record in self.trials if record.ok]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for record in self.trials:
            row = {
                "trial_id": record.trial_id,
                "cv_score": record.cv_score,
                "status": record.status,
                "wall_time_s": record.wall_time,
            }
            for name in FIELD_ORDER:
                value = getattr(record.hp, name)
                row[name] = canonical_json(list(value)) if name == "filter_sizes" else value
            rows.append(row)

        return pd.DataFrame(rows, columns=LEADERBOARD_COLUMNS)


def write_leaderboard(board: Leaderboard, fpath: Union[str, Path]):

    board.to_frame().to_csv(fpath, index=False, lineterminator="\n")
    logger.info(f"Wrote leaderboard of {len(board.trials)} trials to {fpath}")


def read_leaderboard(layout: RunLayout, verify: bool = True) -> Leaderboard:
    """Rebuild the leaderboard of a run directory. With verify, every completed
    trial's cv_score is recomputed from its oof.tsv; mismatches are logged."""

    try:
        df = pd.read_csv(layout.leaderboard, float_precision="round_trip", keep_default_na=False)
    except (FileNotFoundError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"{layout.leaderboard}: unreadable leaderboard ({e})")

    if list(df.columns) != LEADERBOARD_COLUMNS:
        raise DataError(f"{layout.leaderboard}: unexpected columns {list(df.columns)}")

    n_folds = run_folds(layout)
    records = []
    for row in df.to_dict(orient="records"):
        trial_id = int(row["trial_id"])
        values = {name: row[name] for name in FIELD_ORDER}
        values["filter_sizes"] = json.loads(values["filter_sizes"])
        ok = row["status"] == "ok"

        record = TrialRecord(
            trial_id=trial_id,
            hp=HyperParams(**values),
            cv_score=float(row["cv_score"]) if ok else None,
            status=row["status"],
            wall_time=float(row["wall_time_s"]) if row["wall_time_s"] != "" else None,
            model_paths=[
                layout.model_fpath(trial_id, fold).relative_to(layout.root).as_posix()
                for fold in range(n_folds)
            ] if ok else [],
            oof_path=layout.oof_fpath(trial_id).relative_to(layout.root).as_posix() if ok else None
        )

        if verify and ok:
            recomputed = recomputed_cv_score(layout.oof_fpath(trial_id))
            if not np.isclose(recomputed, record.cv_score, rtol=0, atol=1e-9):
                logger.warning(f"trial {trial_id}: leaderboard cv_score {record.cv_score} differs from recomputed {recomputed}")

        records.append(record)

    return Leaderboard(trials=records)


def read_run_manifest(layout: RunLayout) -> dict:

    try:
        return json.loads(layout.manifest.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{layout.root}: not a search run directory (no manifest.json)")


def run_folds(layout: RunLayout) -> int:
    return read_run_manifest(layout)["folds"]


# Shared, read-only inputs of the worker processes
_TRIAL_CONTEXT: dict = {}


def init_trial_context(context: dict):
    _TRIAL_CONTEXT.clear()
    _TRIAL_CONTEXT.update(context)


def run_trial(trial_id: int, hp: HyperParams) -> TrialRecord:
    """Train and persist one trial. Failures are recorded, not raised."""

    context = _TRIAL_CONTEXT
    layout: RunLayout = context["layout"]
    trial_dirpath = layout.trial_dirpath(trial_id)

    logger.info(f"trial {trial_id}: starting {hp.json()}")
    start = time.perf_counter()

    try:
        dataset = context["datasets"].get(hp.word_embedding)
        if dataset is None:
            raise ConfigError(f"no embedding table named {hp.word_embedding!r}")

        fe = train_fold_ensemble(
            hp,
            dataset,
            context["folds"],
            context["sched"],
            substream_seed(context["seed"], trial_id),
            trial_id=trial_id,
            restricted=context["restricted"]
        )

        trial_dirpath.mkdir(parents=True, exist_ok=True)
        for fold, member in enumerate(fe.members):
            save_model(member, layout.model_fpath(trial_id, fold))
        write_oof(layout.oof_fpath(trial_id), context["ids"], fe.oof_labels, fe.fold_of, fe.oof_probs)

    except Exception as e:
        logger.error(f"trial {trial_id}: failed with {type(e).__name__}: {e}")
        if trial_dirpath.exists():
            for fpath in trial_dirpath.iterdir():
                fpath.unlink()
            trial_dirpath.rmdir()

        return TrialRecord(trial_id=trial_id, hp=hp, cv_score=None, status="failed", error=str(e))

    wall_time = time.perf_counter() - start
    logger.info(f"trial {trial_id}: cv score {fe.cv_score:.4f} in {wall_time:.1f}s")

    return TrialRecord(
        trial_id=trial_id,
        hp=hp,
        cv_score=fe.cv_score,
        status="ok",
        wall_time=round(wall_time, 3) if context["record_wall_time"] else None,
        model_paths=[
            layout.model_fpath(trial_id, fold).relative_to(layout.root).as_posix()
            for fold in range(len(fe.members))
        ],
        oof_path=layout.oof_fpath(trial_id).relative_to(layout.root).as_posix()
    )


def run_search(
        datasets: Dict[str, LabeledDocs],
        ids: Sequence[str],
        space: SearchSpace,
        n_trials: int,
        folds: FoldAssignment,
        sched: TrainSchedule,
        seed: int,
        run_dirpath: Union[str, Path],
        parallelism: int = 1,
        restricted: bool = True,
        record_wall_time: bool = False
    ) -> Leaderboard:
    """Sample n_trials distinct configurations, train a fold ensemble for
    each and write the run directory. datasets maps embedding names to the
    training set embedded with that table."""

    if n_trials < 1:
        raise ConfigError(f"need at least one trial, got {n_trials}")
    if parallelism < 1:
        raise ConfigError(f"parallelism must be at least 1, got {parallelism}")
    check_fold_count(folds.k, restricted)

    layout = RunLayout(run_dirpath)
    layout.root.mkdir(parents=True, exist_ok=True)

    configs = sample_configs(space, n_trials, seed)
    write_run_manifest(layout, space, n_trials, folds, sched, seed, datasets, restricted)

    context = {
        "layout": layout,
        "datasets": datasets,
        "ids": list(ids),
        "folds": folds,
        "sched": sched,
        "seed": seed,
        "restricted": restricted,
        "record_wall_time": record_wall_time,
    }

    if parallelism == 1:
        init_trial_context(context)
        records = [run_trial(trial_id, hp) for trial_id, hp in enumerate(configs)]
    else:
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=parallelism,
                initializer=init_trial_context,
                initargs=(context,)
            ) as executor:
            futures = [executor.submit(run_trial, trial_id, hp) for trial_id, hp in enumerate(configs)]
            records = [future.result() for future in futures]

    n_failed = sum(1 for record in records if not record.ok)
    if n_failed:
        logger.warning(f"{n_failed} of {n_trials} trials failed")

    board = Leaderboard.from_records(records)
    write_leaderboard(board, layout.leaderboard)

    return board


def write_run_manifest(
        layout: RunLayout,
        space: SearchSpace,
        n_trials: int,
        folds: FoldAssignment,
        sched: TrainSchedule,
        seed: int,
        datasets: Dict[str, LabeledDocs],
        restricted: bool
    ):

    any_dataset = next(iter(datasets.values()))
    manifest = {
        "format_version": RUN_FORMAT_VERSION,
        "seed": seed,
        "n_trials": n_trials,
        "folds": folds.k,
        "fold_seed": folds.seed,
        "dedupe": True,
        "restricted": restricted,
        "standard_space": space.is_standard_space,
        "space": space.domains,
        "space_descriptor": space.descriptor,
        "schedule": json.loads(sched.json()),
        "embeddings": sorted(datasets),
        "n_examples": len(any_dataset),
        "doc_length": int(any_dataset.docs.shape[1]),
        "embedding_dim": int(any_dataset.docs.shape[2]),
    }

    layout.manifest.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_trial_ensemble(layout: RunLayout, record: TrialRecord) -> FoldEnsemble:

    if not record.ok:
        raise DataError(f"trial {record.trial_id} failed and has no models")

    members = []
    paths = []
    for relpath in record.model_paths:
        fpath = layout.root/relpath
        if not fpath.exists():
            raise DataError(f"trial {record.trial_id}: missing model file {fpath}")
        model = load_model(fpath)
        if not isinstance(model, TrainedModel):
            raise DataError(f"{fpath}: not a trained model")
        members.append(model)
        paths.append(fpath)

    return FoldEnsemble(
        hp=record.hp,
        members=members,
        oof_probs=None,
        oof_labels=None,
        fold_of=None,
        cv_score=record.cv_score,
        trial_id=record.trial_id,
        model_paths=paths
    )


def stack_from_board(board: Leaderboard, layout: RunLayout, K: int) -> StackedEnsemble:
    """Top-K stacked ensemble of a run, loading only the models it needs."""

    completed = board.completed
    if not 1 <= K <= len(completed):
        raise ConfigError(f"top-k must be between 1 and {len(completed)} completed trials, got {K}")

    top = sorted(completed, key=record_key)[:K]
    se = stack_top_k([load_trial_ensemble(layout, record) for record in top], K)

    manifest = read_run_manifest(layout)
    se.fold_seed = manifest["fold_seed"]
    se.space_descriptor = manifest["space_descriptor"]

    return se


REPORT_COLUMNS = [
    "series", "rank", "trial_id", "k", "cv_score",
    "test_precision_m", "test_recall_m", "test_f1_m",
]


def heldout_scores(gold: Sequence[int], probs: np.ndarray):

    pred = [int(p) for p in labels_from_probs(probs)]

    return micro_prf_12(confusion([int(g) for g in gold], pred))


def top_k_report(
        board: Leaderboard,
        layout: RunLayout,
        k_values: Iterable[int],
        test_docs: Dict[str, np.ndarray],
        test_labels: Sequence[int]
    ) -> pd.DataFrame:
    """Test-set scores of every completed trial (in leaderboard order, with its
    cross-validation score) and of the top-K stacked ensemble for each K."""

    completed = sorted(board.completed, key=record_key)
    k_values = sorted(set(k_values))
    if not k_values:
        raise ConfigError("no stack sizes requested")
    if k_values[0] < 1 or k_values[-1] > len(completed):
        raise ConfigError(f"stack sizes must be between 1 and {len(completed)}, got {k_values}")

    rows = []
    trial_probs = []
    for rank, record in enumerate(completed, start=1):
        probs = ensemble_predict(load_trial_ensemble(layout, record), test_docs)
        trial_probs.append(probs)
        precision, recall, f1 = heldout_scores(test_labels, probs)
        rows.append({
            "series": "individual",
            "rank": rank,
            "trial_id": record.trial_id,
            "k": None,
            "cv_score": record.cv_score,
            "test_precision_m": precision,
            "test_recall_m": recall,
            "test_f1_m": f1,
        })

    for k in k_values:
        precision, recall, f1 = heldout_scores(test_labels, average_probs(trial_probs[:k]))
        rows.append({
            "series": "stacked",
            "rank": None,
            "trial_id": None,
            "k": k,
            "cv_score": None,
            "test_precision_m": precision,
            "test_recall_m": recall,
            "test_f1_m": f1,
        })

    df = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    for column in ("rank", "trial_id", "k"):
        df[column] = df[column].astype("Int64")

    return df


def write_report(df: pd.DataFrame, fpath: Union[str, Path]):

    df.to_csv(fpath, index=False, float_format="%.6f", lineterminator="\n")
    logger.info(f"Wrote top-k report to {fpath}")
