"""Exceptions raised by medintake_tools, and the exit codes the CLI maps them to."""

import click


class MedintError(Exception):
    exit_code = 1


class ConfigError(MedintError, ValueError):
    """Invalid hyperparameters, flags or configuration files."""
    exit_code = 1


class DataError(MedintError, ValueError):
    """Malformed or inconsistent input/artifact files."""
    exit_code = 2


class NumericError(MedintError, ArithmeticError):
    """Non-finite values during training, or a failed gradient check."""
    exit_code = 3


def exit_code_for(exc: BaseException) -> int:

    if isinstance(exc, MedintError):
        return exc.exit_code
    if isinstance(exc, click.exceptions.UsageError):
        return 1
    if isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError)):
        return 2

    return 1
