"""Fold ensembles (one model per cross-validation fold) and stacked ensembles
of the best fold ensembles. Both predict by averaging class probabilities.

Ensemble manifest (JSON)::

    {"format_version": 1, "K": 3, "fold_seed": 42, "space_descriptor": "...",
     "members": [{"path": "...", "sha256": "...", "trial_id": 4,
                  "cv_score": 0.93, "fold": 0}, ...]}

One member entry per model file, grouped by trial in ranked order; paths are
relative to the manifest."""

import os
import json
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from .corpus import FoldAssignment
from .errors import ConfigError, DataError, MedintError
from .identifiers import sha256_file, substream_seed
from .io import read_oof
from .metrics import labels_from_probs, score_probs
from .model import (
    HyperParams,
    LabeledDocs,
    TrainSchedule,
    TrainedModel,
    build_model,
    load_model,
    predict_proba,
    save_model,
    train
)


logger = logging.getLogger(__name__)


ENSEMBLE_FORMAT_VERSION = 1
STANDARD_FOLDS = 5

# Either one embedded document array for every member, or one per embedding name
Docs = Union[np.ndarray, Mapping[str, np.ndarray]]


class FoldEnsemble(BaseModel):
    hp: HyperParams
    members: List[TrainedModel]
    oof_probs: Optional[np.ndarray]
    oof_labels: Optional[np.ndarray]
    fold_of: Optional[List[int]]
    cv_score: float
    trial_id: int
    model_paths: Optional[List[Path]]

    class Config:
        arbitrary_types_allowed = True


class StackedEnsemble(BaseModel):
    ranked_members: List[FoldEnsemble]
    K: int
    fold_seed: Optional[int]
    space_descriptor: Optional[str]

    class Config:
        arbitrary_types_allowed = True


def rank_key(fe: FoldEnsemble):
    return (-fe.cv_score, fe.trial_id)


def docs_for(docs: Docs, hp: HyperParams) -> np.ndarray:

    if isinstance(docs, np.ndarray):
        return docs

    try:
        return docs[hp.word_embedding]
    except KeyError:
        raise ConfigError(f"no documents embedded with {hp.word_embedding!r}")


def average_probs(prob_matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Arithmetic mean in float64, summed in the given order."""

    assert prob_matrices, "nothing to average"

    total = np.array(prob_matrices[0], dtype=np.float64)
    for probs in prob_matrices[1:]:
        total += probs

    return total / len(prob_matrices)


def check_fold_count(k: int, restricted: bool = True):

    if restricted and k != STANDARD_FOLDS:
        raise ConfigError(f"standard search space uses {STANDARD_FOLDS} folds, got {k}; pass --unrestricted-space to allow it")


def train_fold_ensemble(
        hp: HyperParams,
        dataset: LabeledDocs,
        folds: FoldAssignment,
        sched: TrainSchedule,
        seed: int,
        trial_id: int = 0,
        restricted: bool = True
    ) -> FoldEnsemble:
    """Train one model per fold on the other folds, using the held-out fold as
    its dev set, and collect each model's predictions on its held-out fold."""

    check_fold_count(folds.k, restricted)
    if len(folds.fold_of) != len(dataset):
        raise DataError(f"fold assignment covers {len(folds.fold_of)} examples, dataset has {len(dataset)}")

    embedding_dim = dataset.docs.shape[-1]
    oof_probs = np.full((len(dataset), 3), np.nan, dtype=np.float64)
    members = []

    for fold in range(folds.k):
        label = f"trial {trial_id} fold {fold}"
        train_part = dataset.subset(folds.train_indices(fold))
        heldout = folds.heldout_indices(fold)
        dev_part = dataset.subset(heldout)

        try:
            model = build_model(hp, embedding_dim, substream_seed(seed, fold), restricted=restricted)
            trained = train(model, train_part, dev_part, sched, substream_seed(seed, fold, "train"), label=label)
        except MedintError as e:
            raise type(e)(f"fold {fold}: {e}") from e

        oof_probs[heldout] = predict_proba(trained.weights, dev_part.docs)
        members.append(trained)
        logger.info(f"{label}: best dev {trained.best_dev_score:.4f} after {trained.epochs_run} epochs")

    assert not np.isnan(oof_probs).any(), "every example gets exactly one out-of-fold prediction"

    cv_score = score_probs(dataset.labels, oof_probs)
    logger.info(f"trial {trial_id}: cross-validation score {cv_score:.4f}")

    return FoldEnsemble(
        hp=hp,
        members=members,
        oof_probs=oof_probs,
        oof_labels=dataset.labels.copy(),
        fold_of=list(folds.fold_of),
        cv_score=cv_score,
        trial_id=trial_id,
        model_paths=None
    )


def ensemble_predict(fe: FoldEnsemble, docs: Docs) -> np.ndarray:

    member_docs = docs_for(docs, fe.hp)

    return average_probs([predict_proba(member.weights, member_docs) for member in fe.members])


def stack_top_k(trials: Sequence[FoldEnsemble], K: int) -> StackedEnsemble:
    """The K best trials by cross-validation score, lower trial id first on ties."""

    if not 1 <= K <= len(trials):
        raise ConfigError(f"top-k must be between 1 and {len(trials)}, got {K}")

    ranked = sorted(trials, key=rank_key)[:K]

    return StackedEnsemble(ranked_members=ranked, K=K, fold_seed=None, space_descriptor=None)


def stacked_predict(se: StackedEnsemble, docs: Docs) -> np.ndarray:
    """Mean of the member ensembles' predictions, which equals the mean over all
    underlying models since every member has the same number of folds."""

    return average_probs([ensemble_predict(fe, docs) for fe in se.ranked_members])


def argmax_label(probs) -> int:
    """Most probable class, the lowest class winning ties."""

    return int(labels_from_probs(np.asarray(probs)[np.newaxis])[0])


def relative_posix(fpath: Path, start: Path) -> str:
    return Path(os.path.relpath(fpath, start)).as_posix()


def save_ensemble(se: StackedEnsemble, manifest_fpath: Union[str, Path]):
    """Write the manifest, and model files for members not already on disk."""

    manifest_fpath = Path(manifest_fpath)
    root = manifest_fpath.parent
    root.mkdir(parents=True, exist_ok=True)

    entries = []
    for fe in se.ranked_members:
        for fold, member in enumerate(fe.members):
            if fe.model_paths is not None:
                model_fpath = Path(fe.model_paths[fold])
            else:
                model_fpath = root/"members"/f"trial{fe.trial_id}_fold{fold}.scnn"
                model_fpath.parent.mkdir(parents=True, exist_ok=True)
                save_model(member, model_fpath)

            entries.append({
                "path": relative_posix(model_fpath, root),
                "sha256": sha256_file(model_fpath),
                "trial_id": fe.trial_id,
                "cv_score": fe.cv_score,
                "fold": fold,
            })

    manifest = {
        "format_version": ENSEMBLE_FORMAT_VERSION,
        "K": se.K,
        "fold_seed": se.fold_seed,
        "space_descriptor": se.space_descriptor,
        "members": entries,
    }

    manifest_fpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote ensemble of {se.K} trials ({len(entries)} models) to {manifest_fpath}")


def recomputed_cv_score(oof_fpath: Path) -> float:

    df = read_oof(oof_fpath)

    return score_probs(df["gold"].tolist(), df[["p1", "p2", "p3"]].to_numpy())


def load_ensemble(manifest_fpath: Union[str, Path], verify_scores: bool = False) -> StackedEnsemble:
    """Load a manifest and its member models, checking every file's hash.

    With verify_scores, each trial's cv_score is recomputed from the oof.tsv
    next to its model files; disagreement is only logged, as manifest scores
    are advisory once an ensemble is built."""

    manifest_fpath = Path(manifest_fpath)
    root = manifest_fpath.parent

    try:
        manifest = json.loads(manifest_fpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{manifest_fpath}: not a valid manifest ({e})")

    version = manifest.get("format_version")
    if version is None or version > ENSEMBLE_FORMAT_VERSION:
        raise DataError(f"{manifest_fpath}: unsupported manifest format version {version}")

    grouped: Dict[int, dict] = {}
    for entry in manifest["members"]:
        model_fpath = root/entry["path"]
        if not model_fpath.exists():
            raise DataError(f"{manifest_fpath}: missing member file {entry['path']}")
        if sha256_file(model_fpath) != entry["sha256"]:
            raise DataError(f"{manifest_fpath}: hash mismatch for member {entry['path']}")

        trained = load_model(model_fpath)
        if not isinstance(trained, TrainedModel):
            raise DataError(f"{model_fpath}: member is not a trained model")

        group = grouped.setdefault(entry["trial_id"], {"cv_score": entry["cv_score"], "members": [], "paths": []})
        group["members"].append(trained)
        group["paths"].append(model_fpath)

    ranked = []
    for trial_id, group in grouped.items():
        hp = group["members"][0].weights.hp
        fe = FoldEnsemble(
            hp=hp,
            members=group["members"],
            oof_probs=None,
            oof_labels=None,
            fold_of=None,
            cv_score=group["cv_score"],
            trial_id=trial_id,
            model_paths=group["paths"]
        )

        if verify_scores:
            oof_fpath = group["paths"][0].parent/"oof.tsv"
            if not oof_fpath.exists():
                logger.warning(f"trial {trial_id}: no out-of-fold file at {oof_fpath}, score not verified")
            else:
                recomputed = recomputed_cv_score(oof_fpath)
                if not np.isclose(recomputed, fe.cv_score, rtol=0, atol=1e-9):
                    logger.warning(
                        f"trial {trial_id}: manifest cv_score {fe.cv_score} differs from recomputed {recomputed}"
                    )

        ranked.append(fe)

    if len(ranked) != manifest["K"]:
        raise DataError(f"{manifest_fpath}: K is {manifest['K']} but {len(ranked)} trials are listed")

    return StackedEnsemble(
        ranked_members=ranked,
        K=manifest["K"],
        fold_seed=manifest.get("fold_seed"),
        space_descriptor=manifest.get("space_descriptor")
    )
