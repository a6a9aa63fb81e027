"""Exception hierarchy.

Errors that the CLI maps to exit codes carry an ``exit_code`` attribute:
2 for input errors, 3 for evaluation errors, 4 for non-convergence.
"""

from __future__ import annotations


class FinslerError(Exception):
    exit_code = 3

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


# --- input / parsing -------------------------------------------------------
class InputError(FinslerError):
    exit_code = 2


class ParseError(InputError):
    """Expression diagnostic with a byte offset into the source."""

    def __init__(self, message: str, source: str, offset: int, end: int | None = None):
        self.source = source
        self.offset = offset
        self.end = offset if end is None else end
        super().__init__(f"{message} at offset {offset}")

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update(source=self.source, offset=self.offset)
        return d


class UnknownIdentifier(ParseError):
    pass


class ArityError(ParseError):
    pass


class ExpressionSyntaxError(ParseError):
    pass


class SpecError(InputError):
    def __init__(self, message: str, offset: int | None = None, path: str | None = None):
        self.offset = offset
        self.path = path
        super().__init__(message)

    def to_dict(self) -> dict:
        d = super().to_dict()
        if self.offset is not None:
            d["offset"] = self.offset
        if self.path is not None:
            d["path"] = self.path
        return d


# --- evaluation ------------------------------------------------------------
class DomainError(FinslerError):
    def __init__(self, message: str, subexpression: str | None = None):
        self.subexpression = subexpression
        if subexpression is not None:
            message = f"{message} in '{subexpression}'"
        super().__init__(message)


class DegenerateInput(FinslerError):
    """Raised for y = 0 (or xi = 0) where the tensor is undefined."""


class DegenerateGradient(FinslerError):
    """Raised where df(x) = 0 and a pointwise operator needs grad f != 0."""


class NotPositiveDefinite(FinslerError):
    pass


class FamilyMismatch(FinslerError):
    pass


class StrongConvexityViolated(FinslerError):
    pass


class UnsupportedVariance(FinslerError):
    pass


class ZeroFunction(FinslerError):
    pass


class ConvergenceFailure(FinslerError):
    exit_code = 4

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (last residual {residual:.3e})")


class NotConverged(FinslerError):
    exit_code = 4

    def __init__(self, message: str, result=None):
        self.result = result
        super().__init__(message)
