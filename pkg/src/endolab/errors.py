"""Exception hierarchy shared by all endolab modules."""


class EndolabError(Exception):
    """Base class for all endolab errors."""


class ConfigError(EndolabError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class NumericalFailure(EndolabError):
    """Base class for numerical-infrastructure failures (exit code 3)."""


class NotHyperbolic(EndolabError):
    pass


class ComplexUnstablePair(EndolabError):
    pass


class UnsupportedDimension(EndolabError):
    pass


class SingularMatrix(EndolabError):
    pass


class NotFound(EndolabError):
    pass


class DegeneratePeriod(EndolabError):
    pass


class NewtonDivergence(NumericalFailure):
    def __init__(self, message, seed=None, residual=None):
        self.seed = seed
        self.residual = residual
        super().__init__(f"{message} (seed={seed}, residual={residual})")


class FrameCollapse(NumericalFailure):
    def __init__(self, message, step=None, orbit=None):
        self.step = step
        self.orbit = orbit
        super().__init__(f"{message} (orbit={orbit}, step={step})")


class NoConvergence(NumericalFailure):
    def __init__(self, message, last_update=None):
        self.last_update = last_update
        super().__init__(f"{message} (last update norm={last_update})")


class NoDomination(NumericalFailure):
    pass


class OrientationFlip(NumericalFailure):
    def __init__(self, message, location=None):
        self.location = location
        super().__init__(f"{message} at {location}")


class MatchingFailure(NumericalFailure):
    pass


class InsufficientScales(EndolabError):
    pass


class OracleMismatch(EndolabError):
    def __init__(self, entries):
        self.entries = list(entries)
        super().__init__("fixture drift: " + ", ".join(self.entries))
