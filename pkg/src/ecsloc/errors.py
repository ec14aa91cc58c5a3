"""Common error base so the CLI can map failures to exit codes."""


class Error(Exception):
    """Base class for every error raised by this package."""
