"""Exception hierarchy shared by all privspn modules."""


class PrivSpnError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PrivSpnError):
    """Invalid parameters (field, sharing, division bounds, run config)."""


class DomainError(PrivSpnError):
    """Arithmetic outside the operation's domain, e.g. inverting zero."""


class ScaleError(PrivSpnError):
    """Fixed-point scale mismatch or a value that missed a truncation."""


class InputError(PrivSpnError):
    """Malformed caller input (duplicate share indices, bad evidence, ...)."""


class ThresholdError(PrivSpnError):
    """Not enough shares or live parties for the requested operation."""


class ParseError(PrivSpnError):
    """A dataset or plan file could not be parsed."""

    def __init__(self, message, row=None, col=None):
        if row is not None:
            message = f"{message} (row {row}, col {col})"
        super().__init__(message)
        self.row = row
        self.col = col


class ProtocolAbort(PrivSpnError):
    """An exercise failed on some member; the whole exercise is abandoned."""


class SetupError(PrivSpnError):
    """A node could not be reached while establishing the network."""


class PrivacyError(PrivSpnError):
    """An operation would disclose secret material in a non-debug setting."""
