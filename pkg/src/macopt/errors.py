"""Exception hierarchy shared by all solvers and the CLI."""


class MacoptError(Exception):
    """Base class for every error raised by this package."""


class DomainError(MacoptError, ValueError):
    """An input is outside the domain of the operation (non-finite, zero trace, ...)."""


class ConfigError(MacoptError):
    """Malformed or inconsistent configuration file."""


class ParseError(MacoptError):
    """A trace or checkpoint file could not be parsed.

    The message always names the offending line (or block) number.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InfeasibleError(MacoptError):
    """Rate targets cannot be met (zero channel with positive target, infeasible LP)."""


class ConvergenceError(MacoptError):
    """An iterative solver hit its iteration budget or produced non-finite values."""


class ContractError(MacoptError):
    """A caller broke a documented precondition (e.g. order not ascending in lambda)."""


class SizeError(MacoptError):
    """Instance too large for an exhaustive routine."""


class CorruptionError(MacoptError):
    """Policy parameters are non-finite or a checkpoint is damaged."""


class EmptyResultError(MacoptError):
    """Every trial of a Monte Carlo run failed, so there is nothing to aggregate."""
