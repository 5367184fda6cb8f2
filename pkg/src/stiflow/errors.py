"""Exception types raised across the package.

Every precondition failure maps to one of these named errors so that
callers (and the command line driver) can distinguish configuration
mistakes from genuine numerical breakdown.
"""


class StiflowError(Exception):
    """Base class for all package errors."""


class GridTooSmall(StiflowError):
    """Grid has fewer cells per axis than an operation requires."""


class GridMismatch(StiflowError):
    """Two fields or maps live on different grids."""


class ShapeMismatch(StiflowError):
    """Array shape disagrees with the declared grid or schedule."""


class TimeMismatch(StiflowError):
    """Two objects carry different time discretizations."""


class TimeOutOfRange(StiflowError):
    """Requested time falls outside the closed interval covered by the grid."""


class IndexOutOfRange(StiflowError):
    """Requested step or observation index does not exist."""


class EmptySequence(StiflowError):
    """A sequence argument that must be non-empty is empty."""


class KernelUnresolvable(StiflowError):
    """Kernel or mollifier width is too small for the grid to resolve."""


class NonPositiveDelta(StiflowError):
    """Smoothing parameter must be strictly positive."""


class NonFiniteTrajectory(StiflowError):
    """An integrated trajectory left the inflated domain or became non-finite."""


class TestFunctionSupportViolation(StiflowError):
    """A weak-form test function fails to vanish where it must."""

    __test__ = False  # keep pytest collection away from the Test* name


class LineSearchStall(StiflowError):
    """Backtracking line search exhausted its budget.

    The optimizer catches this internally and reports a terminal status;
    it is only raised if a caller drives the line search directly.
    """


class UnknownPhantom(StiflowError):
    """Phantom identifier is not one of the built-in names."""


class UnknownSuite(StiflowError):
    """Verification suite name is not recognized."""


class ConfigError(StiflowError):
    """Experiment configuration failed schema validation."""
