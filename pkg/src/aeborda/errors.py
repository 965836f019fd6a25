class NumericalError(RuntimeError):
    """A factorization failed even after jitter escalation."""


class StateError(RuntimeError):
    """An operation was called on a state that cannot support it."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class OracleError(RuntimeError):
    """A preference labeler failed to return a label."""


class OutputError(OSError):
    """Reading or writing campaign files failed."""
