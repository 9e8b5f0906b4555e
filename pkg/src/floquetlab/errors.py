"""Exception types shared across the package."""


class FloquetLabError(Exception):
    """Base class."""


class InvalidLattice(FloquetLabError, ValueError):
    pass


class ConfigError(FloquetLabError, ValueError):
    """Configuration violates a stated constraint."""


class SizeCapError(FloquetLabError):
    """A truncation or closure exceeded its size cap."""


class DegenerateDenominator(FloquetLabError, ArithmeticError):
    pass


class ParamsInconsistent(FloquetLabError):
    """Resonance parameters too coarse for the geometry (rho too small)."""


class InternalError(FloquetLabError, AssertionError):
    """A check that should be unreachable has failed."""


class DegenerateFit(FloquetLabError, ValueError):
    """A scaling fit has no information (zero volumes or coincident abscissae)."""
