"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shape or extent mismatch between tensors/images."""


class DomainError(ValueError):
    """Math domain violation (e.g. log of a non-positive value)."""


class ContractError(RuntimeError):
    """API misuse: backward on a non-scalar, missing gradients, bad argument ranges."""


class NumericsError(ArithmeticError):
    """Non-finite value surfaced by the debug guard or a diverged training run."""


class ConfigError(ValueError):
    """Invalid model or run configuration."""


class FormatError(ValueError):
    """Malformed binary file. ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TruncationError(FormatError):
    """File shorter than its header promises."""


class VersionError(FormatError):
    """Unsupported container format version."""


class IntegrityError(ValueError):
    """Checkpoint contents do not match the target model."""
