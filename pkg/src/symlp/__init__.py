"""Subpixel patch alignment with energy-based and linear-predictor methods."""

from .errors import (ConfigError, DimensionMismatch, FormatError, OutOfBounds, ParseError,
                     SingularSystem, SingularWarp, SymlpError)

__version__ = "0.1.0"

__all__ = ["ConfigError", "DimensionMismatch", "FormatError", "OutOfBounds", "ParseError",
           "SingularSystem", "SingularWarp", "SymlpError"]
