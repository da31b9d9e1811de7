"""Exception hierarchy shared across the package.

Each class maps onto one CLI exit category so batch runs can tell a bad
config from bad data from a numeric blow-up.
"""


class PimsmError(Exception):
    exit_code = 1


class ParameterError(PimsmError, ValueError):
    """Invalid argument values (bad spec, out-of-range frequency, ...)."""

    exit_code = 2


class ConfigError(ParameterError):
    exit_code = 2


class DataError(PimsmError, ValueError):
    """Malformed dataset files or labels."""

    exit_code = 3


class NumericError(PimsmError, ArithmeticError):
    """NaN/inf encountered during training or analysis."""

    exit_code = 4


class ContractError(PimsmError, RuntimeError):
    """Misuse of an API contract, e.g. calling backward on a non-scalar."""

    exit_code = 5
