class TracescopeError(Exception):
    """Base class for every error raised by tracescope."""


class InputError(TracescopeError, ValueError):
    """Malformed input document or file. The CLI maps these to exit code 2."""
