"""Exception types shared across the package."""


class DuxwbError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(DuxwbError):
    """Input violates a mathematical precondition (zero-norm vector, empty list, ...)."""


class DegenerateOutputError(DuxwbError):
    """A model produced an output that cannot be normalized or decoded."""


class EmptyHistogramError(DuxwbError):
    """No valid pixels contributed mass to a chroma histogram."""


class DataError(DuxwbError):
    """Dataset files or manifests are missing, unreadable, or malformed."""
