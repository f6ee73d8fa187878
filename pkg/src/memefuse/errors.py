"""Exception types shared across the package."""


class MemefuseError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MemefuseError):
    """A model/train/data config violates its invariants."""


class ManifestError(MemefuseError):
    """A manifest file is malformed or fails validation."""


class SchemaVersionError(ManifestError):
    """Manifest or checkpoint schema version is not supported."""

    def __init__(self, found, expected):
        super().__init__(f"schema version {found} not supported (expected {expected})")
        self.found = found
        self.expected = expected


class ShapeError(MemefuseError):
    """An array argument has an incompatible shape or dimension."""


class DivergedError(MemefuseError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, part):
        super().__init__(f"non-finite {part} loss at epoch {epoch}")
        self.epoch = epoch
        self.part = part


class OutputExistsError(MemefuseError):
    """Refusing to overwrite existing output without --force."""
