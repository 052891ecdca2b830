"""
Custom exceptions for lateconsensus.

Provides a clear exception hierarchy for the failure modes of a simulation run:
- Invalid trial configuration or experiment grid
- Adversary exceeding its blocking budget
- Oracle evaluation outside a formula's domain
- Unreadable or incomplete result files
- Failed statistical verification
"""

from __future__ import annotations

from pathlib import Path
from typing import Any


class LateConsensusError(Exception):
    """Base exception for all lateconsensus errors."""

    exit_code: int = 1

    def __init__(
        self,
        message: str,
        *,
        details: dict[str, Any] | None = None,
    ) -> None:
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def __str__(self) -> str:
        return self.message

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}("
            f"message={self.message!r}, "
            f"exit_code={self.exit_code!r})"
        )


class ConfigError(LateConsensusError):
    """Raised when a trial configuration or experiment grid is invalid."""

    exit_code = 2

    def __init__(
        self,
        message: str = "Invalid configuration",
        field: str | None = None,
        **kwargs: Any,
    ) -> None:
        super().__init__(message, **kwargs)
        self.field = field

    def __str__(self) -> str:
        if self.field:
            return f"{self.message} (field: {self.field})"
        return self.message


class BudgetExceededError(LateConsensusError):
    """Raised when an adversary returns more blocked nodes than its budget allows."""

    def __init__(
        self,
        message: str = "Adversary exceeded its blocking budget",
        round: int | None = None,
        size: int | None = None,
        budget: int | None = None,
        **kwargs: Any,
    ) -> None:
        super().__init__(message, **kwargs)
        self.round = round
        self.size = size
        self.budget = budget

    def __str__(self) -> str:
        if self.size is not None and self.budget is not None:
            return f"{self.message} (round {self.round}: {self.size} > {self.budget})"
        return self.message


class OracleDomainError(LateConsensusError):
    """Raised when an oracle formula is evaluated outside its domain."""

    def __init__(
        self,
        message: str = "Parameter outside the formula's domain",
        parameter: str | None = None,
        **kwargs: Any,
    ) -> None:
        super().__init__(message, **kwargs)
        self.parameter = parameter


class MalformedResultsError(LateConsensusError):
    """Raised when a results CSV cannot be summarized."""

    def __init__(
        self,
        message: str = "Malformed results file",
        missing: list[str] | None = None,
        **kwargs: Any,
    ) -> None:
        super().__init__(message, **kwargs)
        self.missing = missing or []

    def __str__(self) -> str:
        if self.missing:
            return f"{self.message} (missing columns: {', '.join(self.missing)})"
        return self.message


class MissingCellsError(LateConsensusError):
    """Raised when a summary does not cover every cell of a figure grid."""

    def __init__(
        self,
        message: str = "Summary does not cover the figure grid",
        cells: list[str] | None = None,
        **kwargs: Any,
    ) -> None:
        super().__init__(message, **kwargs)
        self.cells = cells or []

    def __str__(self) -> str:
        if self.cells:
            return f"{self.message}: {'; '.join(self.cells)}"
        return self.message


class OutputError(LateConsensusError):
    """Raised when an output file cannot be written."""

    def __init__(
        self,
        message: str = "Cannot write output",
        path: Path | str | None = None,
        **kwargs: Any,
    ) -> None:
        super().__init__(message, **kwargs)
        self.path = path

    def __str__(self) -> str:
        if self.path is not None:
            return f"{self.message}: {self.path}"
        return self.message


class VerificationError(LateConsensusError):
    """Raised when a statistical verification check fails its threshold."""

    exit_code = 3

    def __init__(
        self,
        message: str = "Verification failed",
        check: str | None = None,
        **kwargs: Any,
    ) -> None:
        super().__init__(message, **kwargs)
        self.check = check

    def __str__(self) -> str:
        if self.check:
            return f"[{self.check}] {self.message}"
        return self.message
