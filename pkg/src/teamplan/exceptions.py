"""Exception types raised across the package."""


class TeamplanError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(TeamplanError, ValueError):
    pass


class EpisodeOverError(TeamplanError, RuntimeError):
    pass


class BufferFullError(TeamplanError, RuntimeError):
    """No solved target slot is free to receive an injected target."""


class DimensionError(TeamplanError, ValueError):
    pass


class DistributionError(TeamplanError, ValueError):
    pass


class InfeasibleTargetError(TeamplanError, ValueError):
    pass


class InvalidPlanError(TeamplanError, ValueError):
    pass


class BudgetExceededError(TeamplanError, RuntimeError):
    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class MetricUndefinedError(TeamplanError, ValueError):
    pass


class EmptyBatchError(TeamplanError, ValueError):
    pass


class PairingError(TeamplanError, ValueError):
    pass


class NonFiniteLossError(TeamplanError, FloatingPointError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
