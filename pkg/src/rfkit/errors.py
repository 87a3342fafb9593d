"""Error types for file parsing and artifact serialization."""


class FormatError(Exception):
    """A file does not match its declared format (bad magic, version, or syntax)."""


class CorruptionError(FormatError):
    """A file matches the format header but its payload is truncated or inconsistent."""
