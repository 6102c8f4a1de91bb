"""Exception hierarchy shared by all modules.

The CLI maps these onto distinct exit codes, so new errors should derive
from one of the two leaf classes below rather than from ``ForgeError``.
"""


class ForgeError(Exception):
    """Base class for every error raised by spdc_forge."""


class ConfigError(ForgeError, ValueError):
    """Invalid user input: bad parameters, files, or inconsistent settings."""


class NumericError(ForgeError, ArithmeticError):
    """A computation could not produce a trustworthy number."""


class OutOfWindowError(ConfigError):
    """Wavelength outside a dispersion model's validity window."""

    def __init__(self, wavelength_nm, window_nm, axis=None):
        self.wavelength_nm = wavelength_nm
        self.window_nm = tuple(window_nm)
        self.axis = axis
        where = f" on axis {axis!r}" if axis else ""
        super().__init__(
            f"wavelength {wavelength_nm!r} nm{where} outside validity window "
            f"[{window_nm[0]}, {window_nm[1]}] nm"
        )


class PerfectPhaseMatching(NumericError):
    """Raised when a poling period is requested for zero phase mismatch."""
