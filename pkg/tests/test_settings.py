import click
import pytest

from medintake_tools.errors import ConfigError, DataError, NumericError, exit_code_for
from medintake_tools.settings import Settings


def test_exit_codes():
    assert exit_code_for(ConfigError("x")) == 1
    assert exit_code_for(DataError("x")) == 2
    assert exit_code_for(NumericError("x")) == 3
    assert exit_code_for(FileNotFoundError("x")) == 2
    assert exit_code_for(click.exceptions.UsageError("x")) == 1
    assert exit_code_for(RuntimeError("x")) == 1


def test_schedule_overrides():
    settings = Settings()
    sched = settings.schedule(max_epochs=4, patience=None)

    assert sched.max_epochs == 4
    assert sched.patience == settings.patience
    assert sched.lr_decay == 0.5


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("MEDINT_FOLDS", "3")
    monkeypatch.setenv("MEDINT_MAX_EPOCHS", "12")

    settings = Settings()

    assert settings.folds == 3
    assert settings.schedule().max_epochs == 12


def test_invalid_setting(monkeypatch):
    monkeypatch.setenv("MEDINT_PARALLELISM", "many")

    with pytest.raises(ValueError):
        Settings()


def test_schedule_rejects_too_many_restarts():
    with pytest.raises(ConfigError, match="restarts_allowed"):
        Settings(restarts_allowed=5).schedule()
