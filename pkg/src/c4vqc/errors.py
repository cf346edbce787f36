"""Exception hierarchy shared by every module of the package."""


class C4Error(Exception):
    """Base class for all package errors."""


class ValidationError(C4Error, ValueError):
    """Input data failed a precondition (lengths, ranges, labels)."""


class ConfigurationError(C4Error, ValueError):
    """A circuit, model or run was configured inconsistently."""


class CapacityError(C4Error, ValueError):
    """A requested size is outside what the simulator or generator supports."""


class CapabilityError(C4Error, NotImplementedError):
    """The requested operation is not supported for this input."""


class ShapeError(C4Error, ValueError):
    """Tensor shapes do not chain (convolution/pooling arithmetic)."""

    def __init__(self, message: str, stage: int | None = None):
        self.stage = stage
        if stage is not None:
            message = f"stage {stage}: {message}"
        super().__init__(message)


class StateError(C4Error, RuntimeError):
    """An object was used before the state it depends on exists."""


class NumericalError(C4Error, ArithmeticError):
    """A computation produced a non-finite value."""


class DataIOError(C4Error, OSError):
    """Files could not be read or written; ``paths`` lists the offenders."""

    def __init__(self, message: str, paths=()):
        self.paths = [str(p) for p in paths]
        if self.paths:
            message = f"{message}: {', '.join(self.paths)}"
        super().__init__(message)
