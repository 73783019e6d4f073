"""Exception hierarchy. Each class carries a stable ``code`` for error records."""


class QxcError(Exception):
    code = "error"


class OracleConvergenceError(QxcError):
    code = "oracle_not_converged"


class DatasetFormatError(QxcError):
    code = "dataset_format"


class CheckpointError(QxcError):
    code = "checkpoint"


class CircuitError(QxcError):
    code = "circuit"


class DegenerateGapError(QxcError):
    code = "degenerate_gap"


class ScfDivergenceError(QxcError):
    code = "scf_divergence"


class ConfigError(QxcError, ValueError):
    """Also a ValueError so schema validators report the offending field."""

    code = "config"


class StaleCacheError(QxcError):
    code = "stale_cache"
