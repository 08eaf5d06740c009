"""Exception types shared across the package."""


class CPShapError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CPShapError):
    """Shapes, feature counts, or coalition indices are inconsistent."""


class ParameterError(CPShapError):
    """A configuration value is outside its legal range."""


class EmptyDataError(CPShapError):
    """An operation received zero rows."""


class SplitError(CPShapError):
    """A requested data split leaves a required partition empty."""


class InsufficientCalibrationError(CPShapError):
    """The calibration set is too small for the requested miscoverage level."""


class IncompleteDividendsError(CPShapError):
    """A dividend mapping is missing a subset needed for reconstruction."""


class DegenerateWeightsError(CPShapError):
    """Proportional weights vanish where positive mass is required."""


class SupportMismatchError(CPShapError):
    """An importance-sampling source distribution has zero mass on a drawn sample."""


class DegenerateBaselineError(CPShapError):
    """Normalization was requested where the full-minus-empty span is ~zero."""

    def __init__(self, message: str, point_id: int | None = None):
        super().__init__(message)
        self.point_id = point_id


class DataFormatError(CPShapError):
    """An input file could not be parsed into the expected tabular form."""
