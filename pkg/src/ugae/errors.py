"""Exception hierarchy. Every error carries a machine-readable category."""


class UgaeError(Exception):
    category = "internal"
    exit_code = 1


class PlyError(UgaeError, ValueError):
    category = "input"
    exit_code = 3


class ConfigError(UgaeError, ValueError):
    category = "config"
    exit_code = 2


class PrerequisiteError(UgaeError):
    category = "prerequisite"
    exit_code = 4


class BitstreamError(UgaeError, ValueError):
    """Corrupt or inconsistent bitstream. ``offset`` is the byte position."""

    category = "bitstream"
    exit_code = 5

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class OverlapError(UgaeError, ValueError):
    """R-D curves do not share a common interval."""

    category = "overlap"
    exit_code = 6


class ModelMismatchError(UgaeError, ValueError):
    category = "model"
    exit_code = 7
