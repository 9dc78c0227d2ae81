"""Exception hierarchy shared by the library and the CLI."""


class GprnError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(GprnError, ValueError):
    exit_code = 2


class DataError(GprnError, ValueError):
    exit_code = 3


class NumericalError(GprnError, ArithmeticError):
    """Cholesky failure, non-finite ELBO or gradient."""

    exit_code = 4

    def __init__(self, message, state=None):
        super().__init__(message)
        # last parameter vector known to give a finite objective, if any
        self.state = state


class OracleFailure(GprnError):
    exit_code = 5
