"""Exception taxonomy.

Every error raised by this package derives from DmLdbpError. The CLI maps
them to exit codes: ConfigError -> 2, NumericalError -> 3,
SyncError/AdaptationError -> 4. ParameterError marks contract violations at
function boundaries (bad shapes, out-of-range values) and also exits 2 when
it escapes to the CLI, since it is always a configuration problem there.
"""


class DmLdbpError(Exception):
    """Base class for all package errors."""


class ParameterError(DmLdbpError, ValueError):
    """An argument violates a function's contract."""


class ConfigError(DmLdbpError, ValueError):
    """Experiment configuration is malformed or inconsistent."""


class NumericalError(DmLdbpError, ArithmeticError):
    """A computation produced non-finite values or overflowed."""


class SyncError(DmLdbpError, RuntimeError):
    """Frame synchronization failed (no unambiguous correlation peak)."""


class AdaptationError(DmLdbpError, RuntimeError):
    """An adaptive equalizer diverged."""
