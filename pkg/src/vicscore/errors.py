"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class VicScoreError(Exception):
    exit_code = 1


class ConfigError(VicScoreError):
    """Invalid configuration or usage."""

    exit_code = 1


class DataError(VicScoreError):
    """Input data does not conform to its schema or to an operation's preconditions."""

    exit_code = 2


class NumericalError(VicScoreError):
    """A numerical procedure failed (sampling, singular matrices, degenerate fits)."""

    exit_code = 3
