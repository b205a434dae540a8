"""
Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to.
"""


class TvpSirdError(Exception):
    """Base class for all package errors"""
    exit_code = 1


class ConfigError(TvpSirdError):
    """Invalid or inconsistent run configuration"""
    exit_code = 2


class DataError(TvpSirdError):
    """Input data that cannot be turned into a valid series"""
    exit_code = 3


class DomainError(TvpSirdError, ValueError):
    """Argument outside the mathematical domain of an operation"""
    exit_code = 4


class NumericalError(TvpSirdError, ArithmeticError):
    """Numerical failure: impossible event, non-finite likelihood, overflow"""
    exit_code = 4
