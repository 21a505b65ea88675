import sys
import logging
import contextlib
from pathlib import Path
from typing import Dict, List, Optional

import click
import numpy as np
import typer
from tabulate import tabulate

from .corpus import CLASS_NAMES, combine_datasets, labels_of, parse_dataset, sequences_for, stratified_kfold
from .embeddings import EmbeddingTable, embed_sequences, load_registry
from .ensemble import (
    argmax_label,
    check_fold_count,
    load_ensemble,
    save_ensemble,
    stack_top_k,
    stacked_predict,
    train_fold_ensemble
)
from .errors import ConfigError, DataError, MedintError, exit_code_for
from .gradcheck import GRADCHECK_TOLERANCE, run_gradcheck
from .identifiers import substream_seed
from .io import RunLayout, read_predictions, removing_on_failure, write_metrics, write_oof, write_predictions
from .metrics import confusion, metrics_report
from .model import LabeledDocs, load_hyperparams, save_model
from .search import (
    DEFAULT_REPORT_K,
    STANDARD_SPACE,
    load_space,
    read_leaderboard,
    run_search,
    stack_from_board,
    top_k_report,
    write_report
)
from .settings import get_settings
from .synth import synth_corpus, write_synth


logger = logging.getLogger(__name__)


app = typer.Typer(help="Random search, stacking and evaluation of shallow CNN tweet classifiers.")


@app.callback()
def configure(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at DEBUG level")):
    settings = get_settings()
    logging.basicConfig(level=logging.DEBUG if verbose else settings.log_level.upper())


@contextlib.contextmanager
def reporting_errors():
    """Report failures on stderr and exit with the matching status."""

    try:
        yield
    except (MedintError, OSError) as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=exit_code_for(e))


def parse_embedding_specs(specs: List[str]) -> Dict[str, Path]:
    """`name=path[,name=path...]`, possibly given more than once."""

    paths = {}
    for spec in specs:
        for item in spec.split(","):
            name, sep, path = item.partition("=")
            if not sep or not name or not path:
                raise ConfigError(f"invalid embedding spec {item!r}, expected name=path")
            if name in paths:
                raise ConfigError(f"embedding {name!r} given twice")
            paths[name] = Path(path)

    return paths


def parse_k_values(spec: str) -> List[int]:

    try:
        k_values = [int(k) for k in spec.split(",")]
    except ValueError:
        raise ConfigError(f"invalid --top-k value {spec!r}")

    return k_values


def load_examples(fpaths: List[Path], labeled: bool):

    return combine_datasets(*(parse_dataset(fpath, labeled) for fpath in fpaths))


def embed_all(tables: Dict[str, EmbeddingTable], examples, doc_length: int) -> Dict[str, np.ndarray]:

    seqs = sequences_for(examples, doc_length)

    return {name: embed_sequences(table, seqs) for name, table in tables.items()}


def require_tables(tables: Dict[str, EmbeddingTable], names):

    missing = sorted(set(names) - set(tables))
    if missing:
        raise ConfigError(f"no --embeddings entry for {', '.join(missing)}")


@app.command()
def search(
        train: List[Path] = typer.Option(..., "--train", help="Labeled TSV; repeat to concatenate"),
        embeddings: List[str] = typer.Option(..., "--embeddings", help="name=path[,name=path]"),
        trials: int = typer.Option(..., "--trials", min=1),
        seed: int = typer.Option(..., "--seed", min=0),
        out: Path = typer.Option(..., "--out", help="Run directory"),
        folds: Optional[int] = typer.Option(None, "--folds"),
        space: Optional[Path] = typer.Option(None, "--space", help="YAML search space"),
        unrestricted_space: bool = typer.Option(False, "--unrestricted-space"),
        max_epochs: Optional[int] = typer.Option(None, "--max-epochs"),
        patience: Optional[int] = typer.Option(None, "--patience"),
        parallelism: Optional[int] = typer.Option(None, "--parallelism"),
        record_wall_time: bool = typer.Option(False, "--record-wall-time")
    ):
    """Sample configurations, train a fold ensemble for each, write a run directory."""

    settings = get_settings()
    restricted = not unrestricted_space

    with reporting_errors(), removing_on_failure([out]):
        search_space = load_space(space, restricted) if space else STANDARD_SPACE
        n_folds = folds or settings.folds
        check_fold_count(n_folds, restricted)
        tables = load_registry(parse_embedding_specs(embeddings))
        require_tables(tables, search_space.domains["word_embedding"])

        examples = load_examples(train, labeled=True)
        fold_assignment = stratified_kfold(examples, n_folds, seed)
        labels = np.array(labels_of(examples), dtype=np.int64)
        datasets = {
            name: LabeledDocs(docs=docs, labels=labels)
            for name, docs in embed_all(tables, examples, settings.doc_length).items()
        }

        board = run_search(
            datasets,
            [example.id for example in examples],
            search_space,
            trials,
            fold_assignment,
            settings.schedule(max_epochs=max_epochs, patience=patience),
            seed,
            out,
            parallelism=parallelism or settings.parallelism,
            restricted=restricted,
            record_wall_time=record_wall_time or settings.record_wall_time
        )

    best = board.completed[0] if board.completed else None
    if best is not None:
        typer.echo(f"best trial {best.trial_id}: cv_score {best.cv_score:.6f}")


@app.command("train")
def train_one(
        train: List[Path] = typer.Option(..., "--train"),
        embeddings: List[str] = typer.Option(..., "--embeddings"),
        config: Path = typer.Option(..., "--config", help="Hyperparameter JSON"),
        seed: int = typer.Option(..., "--seed", min=0),
        out: Path = typer.Option(..., "--out"),
        folds: Optional[int] = typer.Option(None, "--folds"),
        unrestricted_space: bool = typer.Option(False, "--unrestricted-space"),
        max_epochs: Optional[int] = typer.Option(None, "--max-epochs"),
        patience: Optional[int] = typer.Option(None, "--patience")
    ):
    """Train the fold ensemble of one configuration and write it as a one-trial ensemble."""

    settings = get_settings()

    with reporting_errors(), removing_on_failure([out]):
        hp = load_hyperparams(config)
        n_folds = folds or settings.folds
        check_fold_count(n_folds, not unrestricted_space)
        tables = load_registry(parse_embedding_specs(embeddings))
        require_tables(tables, [hp.word_embedding])

        examples = load_examples(train, labeled=True)
        fold_assignment = stratified_kfold(examples, n_folds, seed)
        docs = embed_sequences(tables[hp.word_embedding], sequences_for(examples, settings.doc_length))
        dataset = LabeledDocs(docs=docs, labels=np.array(labels_of(examples), dtype=np.int64))

        fe = train_fold_ensemble(
            hp,
            dataset,
            fold_assignment,
            settings.schedule(max_epochs=max_epochs, patience=patience),
            substream_seed(seed, 0),
            restricted=not unrestricted_space
        )

        layout = RunLayout(out)
        layout.trial_dirpath(fe.trial_id).mkdir(parents=True, exist_ok=True)
        fe.model_paths = []
        for fold, member in enumerate(fe.members):
            fpath = layout.model_fpath(fe.trial_id, fold)
            save_model(member, fpath)
            fe.model_paths.append(fpath)
        write_oof(layout.oof_fpath(fe.trial_id), [e.id for e in examples], fe.oof_labels, fe.fold_of, fe.oof_probs)

        se = stack_top_k([fe], 1)
        se.fold_seed = seed
        save_ensemble(se, out/"ensemble.json")

    typer.echo(f"cv_score {fe.cv_score:.6f}")


@app.command()
def stack(
        run: Path = typer.Option(..., "--run", help="Search run directory"),
        top_k: int = typer.Option(..., "--top-k", min=1),
        out: Path = typer.Option(..., "--out", help="Ensemble manifest to write")
    ):
    """Average the top-K fold ensembles of a search run."""

    with reporting_errors(), removing_on_failure([out]):
        layout = RunLayout(run)
        board = read_leaderboard(layout)
        se = stack_from_board(board, layout, top_k)
        save_ensemble(se, out)

    typer.echo(f"stacked {se.K} trials: {', '.join(str(fe.trial_id) for fe in se.ranked_members)}")


@app.command()
def predict(
        ensemble: Path = typer.Option(..., "--ensemble", help="Ensemble manifest"),
        test: Path = typer.Option(..., "--test", help="Unlabeled TSV"),
        embeddings: List[str] = typer.Option(..., "--embeddings"),
        out: Path = typer.Option(..., "--out", help="Predictions TSV")
    ):
    """Class probabilities and labels for every example, in input order."""

    settings = get_settings()

    with reporting_errors(), removing_on_failure([out]):
        se = load_ensemble(ensemble, verify_scores=True)
        tables = load_registry(parse_embedding_specs(embeddings))
        needed = {fe.hp.word_embedding for fe in se.ranked_members}
        require_tables(tables, needed)

        examples = parse_dataset(test, labeled=False)
        docs = embed_all({name: tables[name] for name in needed}, examples, settings.doc_length)
        probs = stacked_predict(se, docs)
        labels = [argmax_label(row) for row in probs]

        write_predictions([e.id for e in examples], probs, labels, out)


def metrics_table(report) -> str:

    rows = [
        [f"{c} ({CLASS_NAMES[c]})", getattr(report, f"recall_{c}"), getattr(report, f"precision_{c}"), getattr(report, f"f1_{c}")]
        for c in CLASS_NAMES
    ]
    rows.append(["micro (1, 2)", report.recall_m, report.precision_m, report.f1_m])

    return tabulate(rows, headers=["class", "recall", "precision", "F1"], floatfmt=".3f")


@app.command()
def evaluate(
        gold: Path = typer.Option(..., "--gold", help="Labeled TSV"),
        predictions: Path = typer.Option(..., "--predictions"),
        out: Path = typer.Option(..., "--out", help="Metrics JSON")
    ):
    """Per-class and micro (classes 1 and 2) precision, recall and F1."""

    with reporting_errors(), removing_on_failure([out]):
        examples = parse_dataset(gold, labeled=True)
        predicted = dict(read_predictions(predictions))

        missing = [e.id for e in examples if e.id not in predicted]
        if missing:
            raise DataError(f"{predictions}: no prediction for {len(missing)} examples, first {missing[0]!r}")
        extra = set(predicted) - {e.id for e in examples}
        if extra:
            raise DataError(f"{predictions}: {len(extra)} predictions for unknown examples")

        report = metrics_report(confusion(labels_of(examples), [predicted[e.id] for e in examples]))
        write_metrics(report, out)

    typer.echo(metrics_table(report))


@app.command()
def gradcheck(
        seed: int = typer.Option(..., "--seed", min=0),
        cases: int = typer.Option(25, "--cases", min=1)
    ):
    """Compare analytic gradients with finite differences on tiny models."""

    with reporting_errors():
        result = run_gradcheck(seed, cases)

    typer.echo(f"{result.max_error:.6e}")
    if not result.passed:
        typer.echo(
            f"Error: relative gradient error in {result.worst_tensor} exceeds {GRADCHECK_TOLERANCE:g}",
            err=True
        )
        raise typer.Exit(code=3)


@app.command()
def synth(
        out: Path = typer.Option(..., "--out"),
        seed: int = typer.Option(..., "--seed", min=0),
        n_train: int = typer.Option(600, "--n-train", min=1),
        n_test: int = typer.Option(300, "--n-test", min=1),
        dim: int = typer.Option(16, "--dim", min=3)
    ):
    """Write the keyword-separable synthetic corpus and its toy embeddings."""

    with reporting_errors(), removing_on_failure([out]):
        write_synth(out, synth_corpus(n_train, n_test, dim, seed))


@app.command()
def report(
        run: Path = typer.Option(..., "--run"),
        test: Path = typer.Option(..., "--test", help="Labeled TSV"),
        embeddings: List[str] = typer.Option(..., "--embeddings"),
        out: Path = typer.Option(..., "--out", help="Report CSV"),
        top_k: Optional[str] = typer.Option(None, "--top-k", help="K[,K...], default 3,10,20")
    ):
    """Test scores of every trial and of top-K stacks, as CSV."""

    settings = get_settings()

    with reporting_errors(), removing_on_failure([out]):
        layout = RunLayout(run)
        board = read_leaderboard(layout)
        n_completed = len(board.completed)
        if top_k:
            k_values = parse_k_values(top_k)
        else:
            k_values = sorted({min(k, n_completed) for k in DEFAULT_REPORT_K})

        tables = load_registry(parse_embedding_specs(embeddings))
        needed = {record.hp.word_embedding for record in board.completed}
        require_tables(tables, needed)

        examples = parse_dataset(test, labeled=True)
        docs = embed_all({name: tables[name] for name in needed}, examples, settings.doc_length)

        df = top_k_report(board, layout, k_values, docs, labels_of(examples))
        write_report(df, out)

    stacked = df[df["series"] == "stacked"]
    typer.echo(tabulate(
        stacked[["k", "test_precision_m", "test_recall_m", "test_f1_m"]].values.tolist(),
        headers=["top-k", "precision", "recall", "F1"],
        floatfmt=".3f"
    ))

    individual = df[df["series"] == "individual"]
    best = individual.loc[individual["test_f1_m"].idxmax()]
    typer.echo(f"best individual trial on test: {best['trial_id']} (rank {best['rank']}, F1 {best['test_f1_m']:.3f})")


def main():
    """Console entry point: exit 1 for usage or configuration errors, 2 for
    data errors, 3 for numeric failures."""

    try:
        status = app(standalone_mode=False)
    except click.exceptions.UsageError as e:
        e.show()
        status = 1
    except click.exceptions.Abort:
        typer.echo("Aborted!", err=True)
        status = 1
    except Exception as e:
        typer.echo(f"Error: {e}", err=True)
        status = exit_code_for(e)

    sys.exit(status or 0)


if __name__ == "__main__":
    main()
