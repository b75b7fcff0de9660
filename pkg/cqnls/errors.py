from __future__ import annotations

from typing import Any


class CQNLSError(Exception):
    def __init__(self, message: str, **diagnostics: Any) -> None:
        super().__init__(message)
        self.diagnostics: dict[str, Any] = diagnostics

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{key}={value!r}" for key, value in self.diagnostics.items())
        return f"{base} ({details})"


class GridMismatchError(CQNLSError):
    pass


class NonFiniteFieldError(CQNLSError):
    pass


class ResolutionError(CQNLSError):
    pass


class ShootingError(CQNLSError):
    pass


class QuadratureError(CQNLSError):
    pass


class InfeasibleSeedError(CQNLSError, ValueError):
    pass


class ProjectionError(CQNLSError):
    pass


class NegativeDilationError(CQNLSError):
    pass


class RegimeError(CQNLSError):
    pass


class PathCollapseError(CQNLSError):
    pass


class SaddleRefinementError(CQNLSError):
    pass


class PropagationError(CQNLSError):
    def __init__(self, message: str, last_good: Any = None, **diagnostics: Any) -> None:
        super().__init__(message, **diagnostics)
        self.last_good = last_good


class FieldFileError(CQNLSError):
    pass


class ConfigError(CQNLSError):
    pass


class StageError(CQNLSError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
