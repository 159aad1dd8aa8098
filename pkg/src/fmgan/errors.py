"""Exception hierarchy. ``exit_code`` is what the command line returns."""


class FmganError(Exception):
    exit_code = 1


class ConfigError(FmganError, ValueError):
    exit_code = 2


class ParameterError(FmganError, ValueError):
    exit_code = 2


class InputError(FmganError, ValueError):
    exit_code = 3


class DimensionError(InputError):
    pass


class CapacityError(InputError):
    pass


class ContractError(FmganError, RuntimeError):
    exit_code = 3


class NumericError(FmganError, ArithmeticError):
    exit_code = 4
