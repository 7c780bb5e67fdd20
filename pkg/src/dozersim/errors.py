"""Exception types raised across the simulator."""


class DozerSimError(Exception):
    """Base class for all simulator errors."""


class GimbalLock(DozerSimError):
    pass


class DegenerateRotation(DozerSimError):
    pass


class DegenerateLeg(DozerSimError):
    pass


class NonUniformSampling(DozerSimError):
    pass


class NumericalDivergence(DozerSimError):
    pass


class SingularInnovation(DozerSimError):
    pass


class StreamMisaligned(DozerSimError):
    pass


class PlacementFailure(DozerSimError):
    pass


class OutOfBounds(DozerSimError):
    pass


class NoSandVisible(DozerSimError):
    """Raised by a policy when the observation window holds no sand."""


class TimeBudgetExceeded(DozerSimError):
    pass


class ConfigError(DozerSimError):
    """Invalid harness configuration; ``path`` names the offending key."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class MismatchedEnv(DozerSimError):
    pass
