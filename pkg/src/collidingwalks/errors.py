"""Exception types shared across the package."""


class TruncationError(ValueError):
    """Raised in strict mode when the mass lost to box truncation exceeds the cap."""


class BudgetError(ValueError):
    """Raised when an exact-enumeration instance exceeds its explicit-loop budget."""


class ConfigError(ValueError):
    """Raised when an experiment configuration fails validation."""


class IntegrityError(RuntimeError):
    """Raised when a manifest's recorded file hashes do not match the files on disk."""
