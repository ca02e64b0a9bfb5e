"""Exception hierarchy shared by all wetbeam modules."""


class WetbeamError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(WetbeamError, ValueError):
    """Invalid or inconsistent configuration values."""


class ParameterError(WetbeamError, ValueError):
    """A model parameter lies outside its admissible range."""


class ShapeError(WetbeamError, ValueError):
    """Array dimensions do not agree."""


class DegenerateGeometryError(WetbeamError, ValueError):
    """Coincident positions or otherwise undefined geometry."""


class SaturationError(WetbeamError, ValueError):
    """An amplifier is driven beyond its maximum output power."""


class UndefinedEfficiencyError(WetbeamError, ValueError):
    """Drain efficiency requested at zero output power."""


class InfeasibleAnchorError(WetbeamError):
    """An SCA anchor violates the amplifier power limits."""


class InitializationError(WetbeamError):
    """No feasible starting point could be constructed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class CombinatorialBlowupError(WetbeamError):
    """The assignment set is too large to enumerate."""


class SubproblemInfeasibleError(WetbeamError):
    """A convex subproblem of the SCA loop could not be solved."""

    def __init__(self, message, iteration=None, status=None):
        super().__init__(message)
        self.iteration = iteration
        self.status = status


class ExperimentError(WetbeamError):
    """Too many realizations of an experiment failed."""
