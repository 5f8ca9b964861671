"""Exception hierarchy shared by all lftlab modules."""


class LftlabError(Exception):
    """Base class for every error raised deliberately by this package."""


class ContractError(LftlabError):
    """A caller violated an operation's precondition."""


class DimensionError(ContractError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(LftlabError):
    """An experiment or module configuration is invalid."""


class ScheduleError(ConfigError):
    """A training-stage schedule was queried outside its valid range."""


class DataError(LftlabError):
    """Input data is missing, empty, or internally inconsistent."""


class FormatError(DataError):
    """A file does not conform to its documented line format."""


class CheckpointError(LftlabError):
    """A checkpoint file is malformed or does not match expectations."""


class CacheError(LftlabError):
    """A document-representation cache is stale or misused."""


class TrainingAbort(LftlabError):
    """Training hit a non-recoverable numeric state (NaN/Inf loss)."""
