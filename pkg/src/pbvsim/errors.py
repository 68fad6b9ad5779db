"""Exception hierarchy shared by the simulator modules."""


class PbvError(Exception):
    """Base class for all errors raised by pbvsim."""


class InvalidInputError(PbvError, ValueError):
    """An argument violates a documented precondition."""


class RankDeficientError(PbvError):
    """Normal equations of a least-squares problem are singular."""


class FlatDataError(PbvError, ValueError):
    """Data carry no shape information (constant ordinate)."""


class DegenerateSteadyStateError(PbvError):
    """A Liouvillian does not have a one-dimensional kernel."""


class ExtrapolationError(PbvError):
    """A zero-power extrapolation produced a non-physical intercept."""


class TailMassError(PbvError, ValueError):
    """Probability mass beyond the requested support is too large."""


class FitFailedError(PbvError):
    """A fit inside a sweep did not converge.

    Parameters
    ----------
    message : str
    power : float, optional
        The sweep power (W) at which the fit failed.
    """

    def __init__(self, message, power=None):
        super().__init__(message)
        self.power = power


class ConfigError(PbvError, ValueError):
    """Invalid run configuration; ``path`` locates the offending key."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class CalibrationError(PbvError):
    """A calibration request cannot be satisfied."""


class ExperimentError(PbvError):
    """A CLI experiment failed; wraps the downstream error."""

    def __init__(self, experiment, cause):
        super().__init__(f"{experiment}: {cause}")
        self.experiment = experiment
