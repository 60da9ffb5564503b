"""Errors shared across modules."""


class CapExceeded(ValueError):
    """A construction would exceed its configured tractability cap."""
