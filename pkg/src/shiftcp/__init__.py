"""Conformal calibration under distribution shift via one-dimensional optimal transport."""

__version__ = "0.1.0"

from .errors import ValidationError  # noqa: E402

__all__ = ["ValidationError", "__version__"]
