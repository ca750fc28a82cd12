"""Exception hierarchy shared by the estimation modules."""


class QuantBandError(Exception):
    """Base class for all errors raised by quantband."""


class InputError(QuantBandError):
    """Bad user input: malformed files, schemas, configs."""


class ParseError(InputError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column!r})" if column else ")")
        super().__init__(message + where)


class SchemaError(InputError):
    pass


class EmptyData(InputError):
    pass


class ConfigError(InputError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericalError(QuantBandError):
    """Failure of a numerical routine on otherwise valid input."""


class NonFiniteResult(NumericalError):
    pass


class RealValuednessError(NumericalError):
    """Fourier inversion produced a non-negligible imaginary part."""


class DegenerateWeights(NumericalError):
    pass


class EmptyGrid(NumericalError):
    pass


class NoFiniteCandidate(NumericalError):
    pass


class NegativeSignalVariance(NumericalError):
    pass
