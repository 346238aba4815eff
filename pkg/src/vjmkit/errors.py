"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies rather than bare ValueError.
"""


class VjmError(Exception):
    """Base class for all package-specific errors."""


class InputFormatError(VjmError):
    """A file or argument could not be parsed (malformed header, bad shape)."""


class TooFewNodes(VjmError):
    """A displacement field has too few usable nodes for a rigid fit."""


class SingularGeometry(VjmError):
    """Node geometry is rank deficient (collinear cloud, zero spread)."""


class RankDeficientLoads(VjmError):
    """The stacked load cases do not span all six wrench directions."""


class DimensionMismatch(VjmError):
    """A coordinate vector does not match the model it is used with."""


class Unreachable(VjmError):
    """A requested point lies outside the rigid workspace of the model."""


class NoConvergence(VjmError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularConfiguration(VjmError):
    """A stiffness or equilibrium system is numerically singular."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class SingularJacobian(VjmError):
    """A transmission-factor Jacobian is singular (polytope degenerates)."""


class InvalidParams(VjmError):
    """Manipulator parameters violate their documented invariants."""


class NoFeasibleBox(VjmError):
    """No scaled box placement satisfies the workspace predicate."""


class LinearizationWarning(UserWarning):
    """A small-motion quantity is outside the linear range of the model."""
