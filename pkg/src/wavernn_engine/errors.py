class WaveRNNError(Exception):
    """Base class for errors raised by the engine."""


class InputError(WaveRNNError, ValueError):
    """Invalid shapes, ranges or malformed files supplied by the caller."""


class NumericError(WaveRNNError, ArithmeticError):
    """A forward or backward pass produced a non-finite value."""

    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position
