"""EasyCore — Exception hierarchy.

ValidationError and its subclasses are user/config errors (exit code 2 at the
CLI boundary); everything else derived from EasyCoreError is a runtime failure
(exit code 1).
"""


class EasyCoreError(Exception):
    """Base class for every error raised by EasyCore."""


class ValidationError(EasyCoreError, ValueError):
    """Invalid input or configuration.

    Args:
        message: Summary line.
        problems: Optional list of individual violations, reported together.
    """

    def __init__(self, message, problems=None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + "\n" + "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(message)


class ShapeMismatchError(ValidationError):
    def __init__(self, kind, left, right):
        self.kind = kind
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f"{kind}: incompatible shapes {self.left} and {self.right}")


class UnknownKindError(ValidationError):
    def __init__(self, family, kind, known):
        self.family = family
        self.kind = kind
        super().__init__(f"unknown {family} kind '{kind}' (known: {', '.join(sorted(known))})")


class NonFiniteError(EasyCoreError, ArithmeticError):
    """NaN or Inf encountered; `context` names where (epoch, batch, ...)."""

    def __init__(self, message, context=None):
        self.context = dict(context or {})
        if self.context:
            where = ", ".join(f"{k}={v}" for k, v in self.context.items())
            message = f"{message} ({where})"
        super().__init__(message)


class RankDeficientError(ValidationError):
    pass


class SelectionError(ValidationError):
    pass


class CheckpointError(EasyCoreError):
    pass
