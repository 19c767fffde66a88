"""Exception taxonomy shared by all ssmsep modules."""


class SsmSepError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SsmSepError):
    """A configuration value (or combination) is geometrically invalid."""


class ContractError(SsmSepError):
    """An argument violates an interface contract (shape, count, range)."""


class DomainError(SsmSepError):
    """An input is outside the mathematical domain of an operation."""


class NumericFailureError(SsmSepError):
    """A computation produced NaN/Inf. Carries the block index when known."""

    def __init__(self, message, block_index=None):
        super().__init__(message)
        self.block_index = block_index


class GenerationError(SsmSepError):
    """Scene synthesis could not satisfy its constraints."""


class ClippingWarning(UserWarning):
    """A gain stage pushed samples beyond +/-1.0 full scale."""
