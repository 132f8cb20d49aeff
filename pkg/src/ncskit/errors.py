"""Exception hierarchy shared across the toolkit.

Every error carries a short machine-readable ``category`` so the CLI can
map failures to stable exit codes.
"""


class NcskitError(Exception):
    category = "error"


class ConfigurationError(NcskitError):
    """Invalid configuration: bad network spec, unknown parameter, bad value."""

    category = "config"


class InputError(NcskitError):
    """Caller passed data violating a precondition (shape, non-finite values)."""

    category = "input"


class NumericError(NcskitError):
    """Computation produced or hit non-finite / singular numerics."""

    category = "numeric"


class BudgetExhaustedError(NcskitError):
    """A true evaluation was requested after the step budget ran out."""

    category = "budget"


class EnvProtocolError(NcskitError):
    """Environment interaction contract violated (e.g. step after terminal)."""

    category = "contract"


class CheckpointError(NcskitError):
    """Checkpoint file missing, unreadable, or inconsistent."""

    category = "io"


EXIT_CODES = {
    "config": 2,
    "input": 3,
    "numeric": 4,
    "budget": 5,
    "contract": 6,
    "io": 7,
    "error": 1,
}
