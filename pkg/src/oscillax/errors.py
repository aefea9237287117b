"""Exception types shared across the package."""


class OscillaxError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(OscillaxError):
    """A model or distribution violates a structural hypothesis."""


class NotAperiodic(ValidationError):
    pass


class SupportOneSided(ValidationError):
    pass


class O3Violated(ValidationError):
    def __init__(self, d, dprime):
        self.d, self.dprime = d, dprime
        super().__init__(f"D*D' = {d}*{dprime} = {d * dprime} > -2")


class O4Violated(ValidationError):
    pass


class NotCentered(ValidationError):
    pass


class DegenerateInterval(OscillaxError):
    pass


class IdenticalTransforms(OscillaxError):
    pass


class ConventionMismatch(OscillaxError):
    pass


class WindowTooSmall(OscillaxError):
    pass


class DeficitTooLarge(OscillaxError):
    pass


class NoConvergence(OscillaxError):
    def __init__(self, message, gap_estimate=None):
        self.gap_estimate = gap_estimate
        super().__init__(message)


class PlateauNotReached(OscillaxError):
    pass


class SequenceTooNoisy(OscillaxError):
    pass


class LeakDominated(OscillaxError):
    pass


class TieUnresolvable(OscillaxError):
    """A float comparison landed inside the tie tolerance and no exact
    (rational) probabilities are available to resolve it."""


class CrossingMissing(OscillaxError):
    """Internal inconsistency: a crossing-based subcase was selected but the
    transforms do not cross."""
