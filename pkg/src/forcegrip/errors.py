"""Exception hierarchy.  Every domain failure is a :class:`ForceGripError`."""


class ForceGripError(Exception):
    """Base class; the CLI maps these to exit code 1."""


class ArgumentError(ForceGripError, ValueError):
    pass


class DesignError(ForceGripError, ValueError):
    """Filter cannot be realised with the requested parameters."""


class ConfigurationError(ForceGripError, ValueError):
    pass


class CalibrationError(ForceGripError, ValueError):
    pass


class ProtocolError(ForceGripError, ValueError):
    """Calibration protocol preconditions are not met (e.g. too few MVC trials)."""


class ParseError(ForceGripError, ValueError):
    pass


class UndefinedMetricError(ForceGripError, ValueError):
    pass
