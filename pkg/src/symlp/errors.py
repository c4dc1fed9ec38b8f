"""Exception types shared across the package."""


class SymlpError(Exception):
    """Base class for all errors raised by symlp."""


class SingularWarp(SymlpError):
    """A warp or a steepest-descent system has no usable inverse."""


class SingularSystem(SymlpError):
    """A regularized normal-equation matrix is not positive definite."""


class OutOfBounds(SymlpError):
    """A sample location falls outside the image or bounding box."""


class DimensionMismatch(SymlpError, ValueError):
    pass


class ParseError(SymlpError, ValueError):
    pass


class FormatError(SymlpError, ValueError):
    """A symbolic model file is truncated, corrupt or of unknown version."""


class ConfigError(SymlpError, ValueError):
    pass
