"""Exception types shared across the package."""


class InrBoError(Exception):
    """Base class for all errors raised by inrbo."""


class DimensionMismatch(InrBoError, ValueError):
    pass


class NotSymmetric(InrBoError, ValueError):
    pass


class NotPositiveDefinite(InrBoError, ArithmeticError):
    pass


class NonPositiveDiagonal(InrBoError, ArithmeticError):
    pass


class SingularGram(NotPositiveDefinite):
    pass


class InvalidSpace(InrBoError, ValueError):
    pass


class OutOfBounds(InrBoError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class UnsupportedNu(InrBoError, ValueError):
    pass


class NonFiniteActivation(InrBoError, ArithmeticError):
    def __init__(self, layer: int):
        super().__init__(f"non-finite activation in layer {layer}")
        self.layer = layer


class NonFiniteGradient(InrBoError, ArithmeticError):
    pass


class UnsupportedFormat(InrBoError, ValueError):
    pass


class CorruptFile(InrBoError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ModalityMismatch(InrBoError, ValueError):
    pass


class EmptyRun(InrBoError, ValueError):
    pass


class CorruptLog(InrBoError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SettingsMismatch(InrBoError, ValueError):
    pass


class ConfigError(InrBoError, ValueError):
    """A user-supplied document (space, run or configuration file) failed validation."""

    def __init__(self, message: str, source: str | None = None, line: int | None = None,
                 field: str | None = None):
        parts = []
        if source:
            parts.append(f"{source}:{line}" if line is not None else source)
        if field:
            parts.append(field)
        parts.append(message)
        super().__init__(": ".join(parts))
        self.source = source
        self.line = line
        self.field = field
