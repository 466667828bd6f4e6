"""Exception hierarchy shared by every dphmm module."""


class DPHMMError(Exception):
    """Base class for all errors raised by dphmm."""


class DimensionMismatchError(DPHMMError, ValueError):
    pass


class InvalidModelError(DPHMMError, ValueError):
    pass


class InvalidBeliefError(DPHMMError, ValueError):
    pass


class ImpossibleObservationError(DPHMMError):
    """Every state in the constraint assigns zero likelihood to an observation."""


class MissingInputError(DPHMMError, ValueError):
    pass


class UnsupportedDimensionError(DPHMMError):
    pass


class CannotProtectError(DPHMMError):
    """A constraint has no second state, so no repair edge can exist."""


class ModelInconsistencyError(DPHMMError):
    """The true state fell outside the constraint derived from the model."""
