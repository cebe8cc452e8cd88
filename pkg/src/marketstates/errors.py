"""Exception hierarchy. The CLI maps each family onto an exit code."""


class MarketStatesError(Exception):
    exit_code = 1


class ConfigError(MarketStatesError):
    exit_code = 1


class DataError(MarketStatesError, ValueError):
    """Input data violates a domain rule (non-positive price, dead ticker, ...)."""

    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class NumericalError(MarketStatesError, ArithmeticError):
    exit_code = 3
