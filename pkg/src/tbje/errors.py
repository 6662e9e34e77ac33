"""Exception classes shared across the library.

The CLI maps these onto distinct exit codes (see ``tbje.cli``).
"""


class TbjeError(Exception):
    """Base class for all library errors."""


class ShapeError(TbjeError):
    """Operands have incompatible shapes; the message names both."""


class NumericError(TbjeError):
    """Non-finite values where finite ones are required."""


class ContractError(TbjeError):
    """An operation was called outside its contract (e.g. all keys masked,
    backward() invoked twice on one tape)."""


class ConfigError(TbjeError):
    """Invalid or inconsistent configuration / incompatible artifacts."""


class DataWarning(UserWarning):
    """Recoverable data-quality issue (empty utterance, too-short waveform,
    embedding fallbacks). Extraction continues with a documented substitute."""
