"""Exception hierarchy shared by every stage of the toolchain."""


class FoldSparseError(Exception):
    """Base class; the CLI maps subclasses onto exit codes."""


class ParseError(FoldSparseError):
    pass


class ValidationError(FoldSparseError):
    pass


class ShapeError(ValidationError):
    pass


class InvalidFold(ValidationError):
    pass


class MissingProfile(FoldSparseError):
    pass


class MissingQuantSpec(FoldSparseError):
    pass


class NoPrunableLayers(FoldSparseError):
    pass


class ChecksumMismatch(FoldSparseError):
    pass


class InfeasibleBudget(FoldSparseError):
    pass


class SearchSpaceTooLarge(FoldSparseError):
    pass
