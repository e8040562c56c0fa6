"""Exception hierarchy shared across the package."""


class ProtoepError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(ProtoepError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ProtoepError):
    """Input outside the mathematical domain of an operation."""


class ContractError(ProtoepError):
    """A caller violated an operation precondition."""


class ConfigError(ProtoepError):
    """Invalid or inconsistent configuration."""


class CapacityError(ProtoepError):
    """Dataset cannot support the requested episode shape."""


class DataFormatError(ProtoepError):
    """Malformed input file or record."""


class SampleSkipped(ProtoepError):
    """Sample cannot be indexed under the current length limits."""


class TrainingDiverged(ProtoepError):
    """Non-finite loss encountered during optimization."""


class CheckpointMismatch(ProtoepError):
    """Checkpoint fingerprint does not match the requested architecture."""
