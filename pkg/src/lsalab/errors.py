"""Exception types shared across the package.

Exit-code contract used by the command line front end:
validation/assumption failures map to exit code 2, runtime numerical
failures to exit code 3, usage errors to exit code 1.
"""

from __future__ import annotations


class LsaLabError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(LsaLabError):
    """Malformed or inconsistent configuration file content."""


class InconsistentDims(LsaLabError):
    """Array shapes in a model or config do not line up."""


class NonErgodicChain(LsaLabError):
    """Transition matrix is reducible, periodic, or mixes too slowly."""


class SingularSystem(LsaLabError):
    """A linear system required by a closed form is numerically singular."""


class NotHurwitz(LsaLabError):
    """Mean matrix fails the stability assumption (some Re(eig) <= 0)."""


class CenteringViolation(LsaLabError):
    """Declared means disagree with the stationary averages of the data."""


class NumericalDivergence(LsaLabError):
    """Iterate norm blew past the divergence guard.

    Attributes:
        step: first iteration index at which the guard tripped.
    """

    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step


class TruncationFailure(LsaLabError):
    """A truncated series failed to meet its tail tolerance."""


class InsufficientGrid(LsaLabError):
    """Experiment grid cannot support the requested fit or statistic."""
