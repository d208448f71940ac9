"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with inputs that break its shape/value contract."""


class ConfigurationError(ValueError):
    """A layer, branch or run was configured with invalid settings."""


class UnsupportedConfiguration(ConfigurationError):
    """The requested configuration is valid in general but not on this code path."""


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, message, *, epoch, batch_index, seed, indices):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
        self.seed = seed
        self.indices = list(indices)
