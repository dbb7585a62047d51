"""Exception hierarchy shared by every pefad module."""


class PefadError(Exception):
    """Base class for all errors raised by pefad."""


class ShapeError(PefadError, ValueError):
    pass


class ContractError(PefadError):
    """A caller broke an operation's precondition (wrong length, non-scalar loss, ...)."""


class ConfigError(PefadError, ValueError):
    pass


class InputError(PefadError, ValueError):
    pass


class ProtocolError(PefadError):
    """Federation message or aggregation rule violated."""


class TrainingError(PefadError, RuntimeError):
    pass


class MetricError(PefadError, ValueError):
    """Metric undefined for the given labels (e.g. single-class AUC)."""
