"""Exception hierarchy shared across the package."""


class VflReidError(Exception):
    """Base class for all package errors."""


class DimensionError(VflReidError, ValueError):
    pass


class DomainError(VflReidError, ValueError):
    pass


class ContractError(VflReidError, ValueError):
    pass


class ConfigError(VflReidError, ValueError):
    """Invalid configuration. ``errors`` lists every violated field."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("invalid config: " + "; ".join(self.errors))


class ProtocolError(VflReidError, ValueError):
    """Evaluation protocol violated (empty gallery, query without matches)."""


class FeatureFileError(VflReidError, ValueError):
    """Malformed feature file line or inconsistent vector width."""


class CheckpointError(VflReidError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CompatibilityError(VflReidError, ValueError):
    """Checkpoint or input does not fit the model it is used with."""
