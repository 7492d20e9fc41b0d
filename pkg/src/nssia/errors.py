"""Shared exception base for the package."""


class NssiaError(Exception):
    """Base class for every protocol-level failure raised by this package."""
