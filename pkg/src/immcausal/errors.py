"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from __future__ import annotations


class ImmCausalError(Exception):
    exit_code = 4


class ConfigError(ImmCausalError):
    exit_code = 2


class UsageError(ConfigError):
    pass


class DataError(ImmCausalError):
    exit_code = 3


class InsufficientDataError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class DomainError(ImmCausalError, ValueError):
    pass
