from typing import Optional, Tuple


class CyclomassError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(CyclomassError):
    """
    A configuration key is unknown or violates a constraint.
    """

    def __init__(self, key: str, constraint: str):
        self.key = key
        self.constraint = constraint
        super().__init__(f"config key '{key}': {constraint}")


class NonFiniteFieldError(CyclomassError):
    def __init__(self, index: Tuple[int, ...], where: str = "field", step: Optional[int] = None):
        self.index = index
        self.step = step
        msg = f"non-finite value in {where} at index {index}"
        if step is not None:
            msg += f" (step {step})"
        super().__init__(msg)


class SizeMismatchError(CyclomassError):
    pass


class ResolutionError(CyclomassError):
    """Requested mode count or grid is too coarse for the resolution rule."""


class InvariantViolation(CyclomassError):
    """
    A computed object failed one of its invariants. `name` identifies the check.
    """

    def __init__(self, name: str, detail: str):
        self.name = name
        super().__init__(f"invariant '{name}' violated: {detail}")


class EigenSolveError(CyclomassError):
    pass


class DegeneracyError(CyclomassError):
    pass


class TruncationError(CyclomassError):
    pass


class NegativeAlphaError(CyclomassError):
    pass


class MemoryBudgetError(CyclomassError):
    def __init__(self, required: int, available: int, what: str = "kernel"):
        self.required = required
        self.available = available
        super().__init__(
            f"{what} needs {required} padded points, budget is {available}"
        )


class ContainerFormatError(CyclomassError):
    pass
