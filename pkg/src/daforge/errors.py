"""Exception hierarchy shared across the package."""


class DAForgeError(Exception):
    pass


class ShapeError(DAForgeError, ValueError):
    """A tensor reached a layer with the wrong shape, or a geometry underflowed."""


class UsageError(DAForgeError, RuntimeError):
    """An API was called out of order (e.g. backward before forward)."""


class NumericError(DAForgeError, FloatingPointError):
    """A loss or gradient became non-finite."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
