"""Exception types raised across the package."""


class SwitchpredError(Exception):
    """Base class for package-specific failures."""


class ConfigError(SwitchpredError, ValueError):
    """Malformed system definition or run configuration."""


class StateError(SwitchpredError, ValueError):
    """Invalid state vector (non-finite entries or wrong shape)."""


class HistoryRangeError(SwitchpredError, ValueError):
    """Lookup time outside the stored input window."""


class GridMismatchError(SwitchpredError, ValueError):
    """Arrays that must share the sampling grid do not."""


class PredictorDivergedError(SwitchpredError, RuntimeError):
    """Prediction sweep produced a non-finite value."""


class ChatteringError(SwitchpredError, RuntimeError):
    """Mode-change count exceeded the configured guard."""


class MatrixExponentialOverflowError(SwitchpredError, ValueError):
    """Requested matrix exponential would overflow double precision."""
