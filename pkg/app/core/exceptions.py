from typing import Optional


class LabError(Exception):
    """Base error carrying a process exit code and a detail message."""

    exit_code: int = 3

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail

    def __str__(self) -> str:
        return self.detail


class UsageError(LabError):
    exit_code = 1


class ValidationFailure(LabError):
    exit_code = 2


class DimensionError(ValidationFailure):
    pass


class DomainError(ValidationFailure):
    pass


class GeometryError(ValidationFailure):
    pass


class ManifestError(ValidationFailure):
    pass


class EngineError(LabError):
    exit_code = 3


class NotPSDError(EngineError):
    pass


class NumericalError(EngineError):
    pass


class ConvergenceError(EngineError):
    def __init__(self, detail: str, residual: Optional[float] = None):
        super().__init__(detail)
        self.residual = residual


class SpectralRadiusError(EngineError):
    pass
