"""Exception hierarchy shared across the package."""


class CanetError(Exception):
    """Base class for all package errors."""


class ValidationError(CanetError):
    """Input violates a documented precondition or invariant."""


class DimensionMismatchError(ValidationError):
    """Operands have incompatible shapes or dimensions."""


class IndefiniteMatrixError(ValidationError):
    """A matrix required to be positive semidefinite has a significantly
    negative eigenvalue."""


class OrientationError(ValidationError):
    """Fine/coarse roles are swapped (e.g. low-level dimension smaller than
    high-level)."""


class SupportMismatchError(ValidationError):
    """Two covariances live on incomparable supports (unequal ranks), so the
    rank-restricted divergence is undefined."""


class InfeasibleMaskError(ValidationError):
    """A sparsity mask admits no orthonormal-column matrix (e.g. an all-zero
    column)."""


class InfeasibleShapesError(ValidationError):
    """Rank or shape ordering rules out any solution (e.g. fine rank below
    coarse rank)."""


class TopologyError(ValidationError):
    """The network topology does not support the requested operation."""


class MultiPathError(TopologyError):
    """Distinct oriented paths between two nodes disagree, so a section
    cannot be generated."""


class CycleError(ValidationError):
    """A relation matrix expected to be acyclic contains a cycle."""


class SchemaError(ValidationError):
    """A serialized document violates the expected schema.

    The offending location is reported as a dotted/indexed path such as
    ``edges[2].weights``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class InternalConsistencyError(CanetError):
    """Two redundant computations of the same quantity disagree; indicates a
    bug, not bad input."""
