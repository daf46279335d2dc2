"""Exception hierarchy.

Validation problems (bad input files, violated preconditions) and numerical
failures (resonance guards, rank deficiencies) are kept apart so the command
line front end can map them to distinct exit codes.
"""
from __future__ import annotations


class ThinFiberError(Exception):
    """Base class for every error raised by the package."""

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class ValidationError(ThinFiberError, ValueError):
    pass


class NumericalError(ThinFiberError, ArithmeticError):
    pass


class RankDeficiencyError(NumericalError):
    pass


class ResonanceError(NumericalError):
    """Spectral parameter too close to an eigenvalue or resonance."""


class SnapError(NumericalError):
    """Threshold matrix has an eigenvalue that is not close to +1 or -1."""


class ExtrapolationError(NumericalError):
    pass


class ClassificationError(NumericalError):
    """Zero-energy data does not admit a clean gluing-condition classification."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def to_dict(self) -> dict:
        out = super().to_dict()
        out["diagnostics"] = self.diagnostics
        return out
