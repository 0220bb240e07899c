"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: configuration/usage problems exit
with 2, file-format and IO problems with 3, numeric failures with 4.
"""


class SagaError(Exception):
    exit_code = 1


class ConfigError(SagaError, ValueError):
    exit_code = 2


class ParameterError(ConfigError):
    """A scalar hyperparameter is outside its valid range."""


class ShapeError(ConfigError):
    """Tensor extents do not agree with an op's contract."""


class ContractError(SagaError, ValueError):
    """A function was called in a way its contract forbids."""

    exit_code = 2


class GraphStateError(SagaError, RuntimeError):
    exit_code = 2


class NumericError(SagaError, ArithmeticError):
    """A NaN or Inf appeared in a computation."""

    exit_code = 4


class FormatError(SagaError, ValueError):
    """A binary or text file does not match its format."""

    exit_code = 3


class ValidationError(ConfigError):
    """A manifest or dataset description is internally inconsistent."""


class UnknownLabelError(SagaError, KeyError):
    exit_code = 2

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class SamplerError(ConfigError):
    pass


class MiningError(SagaError, ValueError):
    exit_code = 2


class StatsError(SagaError, ValueError):
    exit_code = 2
