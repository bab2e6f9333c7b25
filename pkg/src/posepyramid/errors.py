"""Exception types shared across the package."""


class PosePyramidError(Exception):
    """Base class for all package errors."""


class ShapeError(PosePyramidError):
    """Tensor or array dimensions do not match an operation's contract."""


class ParameterError(PosePyramidError):
    """A hyperparameter or argument is outside its valid range."""


class GraphError(PosePyramidError):
    """The skeleton graph violates a structural requirement."""


class NumericError(PosePyramidError):
    """A numeric failure: NaN/Inf, divergence, or a degenerate spectrum."""


class DataError(PosePyramidError):
    """A data file or record is malformed or inconsistent."""
