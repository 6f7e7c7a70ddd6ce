"""Exception hierarchy shared by every module."""


class ContactForgeError(Exception):
    """Base class for all domain errors."""


class Penetration(ContactForgeError):
    def __init__(self, depth):
        super().__init__(f"penetration of {depth:.3e} m")
        self.depth = depth


class MultiContact(ContactForgeError):
    pass


class SingularStiffness(ContactForgeError):
    pass


class RankDeficientData(ContactForgeError):
    pass


class NonConvergence(ContactForgeError):
    def __init__(self, iters, residual):
        super().__init__(f"no convergence after {iters} iterations (residual {residual:.3e})")
        self.iters = iters
        self.residual = residual


class NonPositiveNormal(ContactForgeError):
    pass


class MaxIterations(ContactForgeError):
    pass


class NumericalFailure(ContactForgeError):
    def __init__(self, condition):
        super().__init__(f"numerical failure (condition estimate {condition:.3e})")
        self.condition = condition


class DegenerateActiveSet(ContactForgeError):
    pass


class GeometryMismatch(ContactForgeError):
    pass


class EmptyContactSet(ContactForgeError):
    pass


class TooFewPoints(ContactForgeError):
    pass


class NoConsistentMode(ContactForgeError):
    pass


class QuasiStaticViolation(ContactForgeError):
    pass


class PenetrationInLoss(ContactForgeError):
    pass


class InfeasibleInit(ContactForgeError):
    pass


class NoContactPlacement(ContactForgeError):
    pass


class ConfigError(ContactForgeError):
    """Malformed scene, skill or data file."""
