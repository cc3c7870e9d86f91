"""Exception hierarchy shared across the package."""


class ProtoFSLError(Exception):
    """Base class for all package errors."""


class ValidationError(ProtoFSLError, ValueError):
    """Inputs violate a structural invariant."""


class EmptyClass(ValidationError):
    """A class with no samples was given where at least one is required."""


class DimensionMismatch(ValidationError):
    pass


class InsufficientPool(ValidationError):
    """More neighbors were requested than the pool can provide."""


class SplitError(ValidationError):
    pass


class InsufficientShots(ValidationError):
    pass


class FormatError(ProtoFSLError, ValueError):
    """Malformed feature file. ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(ProtoFSLError, ArithmeticError):
    """Base class for failures of the numerical routines."""


class RankDeficient(NumericalError):
    def __init__(self, message, rank, class_id=None):
        super().__init__(message)
        self.rank = rank
        self.class_id = class_id


class DegenerateMean(NumericalError):
    """The extrinsic mean is not unique (eigenvalue tie at the cut)."""

    def __init__(self, message, class_id=None):
        super().__init__(message)
        self.class_id = class_id


class IsolatedTransient(NumericalError):
    pass


class StateUnreachable(NumericalError):
    """Some transient state cannot reach any absorbing state."""

    def __init__(self, message, pass_number=None):
        super().__init__(message)
        self.pass_number = pass_number
