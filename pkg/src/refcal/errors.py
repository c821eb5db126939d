"""Exception hierarchy.

Errors split into two families so the command line can map them onto exit
codes: :class:`InputError` (bad or insufficient user input, exit 1) and
:class:`NumericalError` (convergence or degeneracy failures, exit 2).
"""


class CalibError(Exception):
    """Base class for every error raised by this package."""


class InputError(CalibError):
    """The caller supplied invalid, malformed or insufficient input."""


class NumericalError(CalibError):
    """A computation failed to converge or hit a degenerate configuration."""


# geometry
class BehindCamera(NumericalError):
    pass


class BehindInterface(NumericalError):
    pass


class TotalInternalReflection(NumericalError):
    pass


class ParallelRay(NumericalError):
    pass


class NoForwardIntersection(NumericalError):
    pass


class NoIntersection(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


# solver / closed-form initializers
class RankDeficient(NumericalError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class DegenerateMotion(NumericalError):
    pass


class DegenerateH(NumericalError):
    pass


class DegenerateGeometry(NumericalError):
    pass


# calibration front ends
class InsufficientViews(InputError):
    pass


class InsufficientPairs(InputError):
    pass


# synthetic data
class ViewSamplingFailed(NumericalError):
    pass


class UnknownPreset(InputError):
    pass


# file formats
class ParseError(InputError):
    pass


class SchemaError(InputError):
    pass


class ValidationError(InputError):
    pass
