"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A parameter or configuration value is out of its admissible range."""


class CapabilityError(RuntimeError):
    """The request is well formed but outside what an engine supports."""


class PrecisionError(CapabilityError):
    """A closed form would lose too much precision at the requested size.

    Callers should fall back to the corresponding recursion.
    """


class NumericalCheckError(ArithmeticError):
    """An internal numerical identity failed beyond its tolerance."""


class TraceIOError(OSError):
    """Reading or writing an event trace failed; carries the offending path."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
