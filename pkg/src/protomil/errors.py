"""Exception types shared across the package."""


class ProtomilError(Exception):
    """Base class for all package errors."""


class DimensionError(ProtomilError):
    """Operands have incompatible shapes or lengths."""


class NumericalError(ProtomilError):
    """A computation produced non-finite values or failed to converge."""


class DegenerateBagError(ProtomilError):
    """A bag has too few (distinct) instances to be clustered."""


class EmptySetError(ProtomilError):
    """A distribution distance was requested for an empty instance set."""


class EmptyClusterError(ProtomilError):
    """A pooled representation was requested for an empty cluster."""


class DivergenceError(ProtomilError):
    """Training produced a non-finite loss.

    Carries the last parameters that still evaluated to a finite loss so
    callers can checkpoint them.
    """

    def __init__(self, message, last_params=None, epoch=None):
        super().__init__(message)
        self.last_params = last_params
        self.epoch = epoch


class ConfigError(ProtomilError):
    """A run configuration failed validation; message names the key."""


class IoError(ProtomilError):
    """A file could not be read, written, or parsed."""


class CheckpointMismatchError(ProtomilError):
    """Checkpoint dimensions do not match the dataset."""


class NotFoundError(ProtomilError):
    """A requested resource (e.g. bag id) does not exist."""


class RolesUnavailableError(ProtomilError):
    """Ground-truth instance roles were requested but are not present."""


class UndefinedMetricError(ProtomilError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""
