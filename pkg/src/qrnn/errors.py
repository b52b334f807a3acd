"""Exception and warning types raised across the package."""


class QrnnError(Exception):
    pass


class CycleDetected(QrnnError):
    pass


class TypeConflict(QrnnError):
    pass


class RewireMismatch(QrnnError):
    pass


class ParseError(QrnnError):
    def __init__(self, message, line=None, offset=None):
        self.line = line
        self.offset = offset
        if line is not None:
            message = f"{message} (line {line}, column {offset})"
        super().__init__(message)


class SchemaVersionError(QrnnError):
    pass


class InvalidQuantParams(QrnnError):
    pass


class RangeError(QrnnError):
    pass


class ShapeMismatch(QrnnError):
    pass


class UnsupportedActivation(QrnnError):
    pass


class FixpointNotReached(QrnnError):
    def __init__(self, message, graph=None, reports=None):
        super().__init__(message)
        self.graph = graph
        self.reports = reports or []


class SignatureMismatch(QrnnError):
    pass


class ConfigError(QrnnError):
    pass


class ShapeChainError(ConfigError):
    pass


class MissingFeed(QrnnError):
    pass


class UnsupportedOp(QrnnError):
    pass


class BodySignatureMismatch(QrnnError):
    pass


class IntegerOverflow(QrnnError):
    pass


class StepBudgetExceeded(QrnnError):
    pass


class UnreachableLevels(UserWarning):
    """Some quantizer levels cannot be produced by the activation."""


class DegenerateTensor(UserWarning):
    """An all-zero tensor was quantized; its scale falls back to 1."""
