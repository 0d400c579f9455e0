from __future__ import annotations


class JmnpdeError(Exception):
    """Base class for every error raised by the evaluation library."""


class SpecError(JmnpdeError, ValueError):
    """Invalid model specification, design, dataset or configuration."""

    def __init__(self, message: str, field: str | None = None) -> None:
        super().__init__(message)
        self.field = field


class NumericalError(JmnpdeError, RuntimeError):
    """Quadrature, root-finding or factorisation failed to converge."""

    def __init__(self, message: str, context: dict | None = None) -> None:
        super().__init__(message)
        self.context = dict(context or {})
