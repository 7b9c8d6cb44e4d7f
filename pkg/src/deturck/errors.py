"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, BlowUpError -> 3,
SnapshotFormatError and OS-level failures -> 4.
"""


class DeturckError(Exception):
    """Base class for package errors."""


class ConfigError(DeturckError):
    """Invalid experiment configuration (bad key, bad value, missing seed)."""


class BlowUpError(DeturckError):
    """The evolved perturbation left the solver operating regime sup|h| < 1/2."""

    def __init__(self, message, t=None, step=None, sup=None):
        super().__init__(message)
        self.t = t
        self.step = step
        self.sup = sup


class SnapshotFormatError(DeturckError):
    """Malformed or unsupported snapshot file."""
