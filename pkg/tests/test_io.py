import numpy as np
import pytest

from medintake_tools.errors import DataError
from medintake_tools.io import (
    RunLayout,
    read_oof,
    read_predictions,
    removing_on_failure,
    write_oof,
    write_predictions
)


def test_run_layout(tmp_path):
    layout = RunLayout(tmp_path/"run")

    assert layout.manifest == tmp_path/"run"/"manifest.json"
    assert layout.leaderboard == tmp_path/"run"/"leaderboard.csv"
    assert layout.model_fpath(4, 2) == tmp_path/"run"/"trials"/"4"/"fold2.scnn"
    assert layout.oof_fpath(4) == tmp_path/"run"/"trials"/"4"/"oof.tsv"


def test_predictions_format(tmp_path):
    fpath = tmp_path/"pred.tsv"
    probs = np.array([[0.2, 0.5, 0.3], [1 / 3, 1 / 3, 1 / 3]])
    write_predictions(["t1", "t2"], probs, [2, 1], fpath)

    assert fpath.read_text() == "t1\t2\t0.200000\t0.500000\t0.300000\nt2\t1\t0.333333\t0.333333\t0.333333\n"
    assert read_predictions(fpath) == [("t1", 2), ("t2", 1)]


def test_read_predictions_without_probabilities(tmp_path):
    fpath = tmp_path/"pred.tsv"
    fpath.write_text("a\t3\nb\t1\n")

    assert read_predictions(fpath) == [("a", 3), ("b", 1)]


def test_read_predictions_errors(tmp_path):
    fpath = tmp_path/"pred.tsv"

    fpath.write_text("a\t1\nb\t2\na\t3\n")
    with pytest.raises(DataError, match="duplicate id 'a' at line 3, first seen at line 1"):
        read_predictions(fpath)

    fpath.write_text("a\t3\t0.1\n")
    with pytest.raises(DataError, match="line 1"):
        read_predictions(fpath)

    fpath.write_text("a\t1\nb\t4\n")
    with pytest.raises(DataError, match="label out of range at line 2"):
        read_predictions(fpath)


def test_oof_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(8)
    probs = rng.dirichlet(np.ones(3), size=7)
    fpath = tmp_path/"oof.tsv"
    write_oof(fpath, [f"t{n}" for n in range(7)], [1, 2, 3, 1, 2, 3, 1], [0, 1, 2, 3, 4, 0, 1], probs)

    df = read_oof(fpath)

    assert list(df["id"]) == [f"t{n}" for n in range(7)]
    assert list(df["fold"]) == [0, 1, 2, 3, 4, 0, 1]
    assert np.array_equal(df[["p1", "p2", "p3"]].to_numpy(), probs)


def test_read_oof_rejects_wrong_columns(tmp_path):
    fpath = tmp_path/"oof.tsv"
    fpath.write_text("id\tgold\np\t1\n")

    with pytest.raises(DataError, match="expected columns"):
        read_oof(fpath)


def test_removing_on_failure(tmp_path):
    existing = tmp_path/"existing.txt"
    existing.write_text("keep")
    created = tmp_path/"created"

    with pytest.raises(RuntimeError):
        with removing_on_failure([existing, created]):
            created.mkdir()
            (created/"partial").write_text("x")
            raise RuntimeError("boom")

    assert existing.read_text() == "keep"
    assert not created.exists()


def test_removing_on_failure_keeps_outputs_on_success(tmp_path):
    created = tmp_path/"out.txt"

    with removing_on_failure([created]):
        created.write_text("done")

    assert created.exists()
