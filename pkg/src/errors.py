"""
Exception hierarchy for cluster-fed-flow.

Every error raised on purpose by the package derives from FederatedFlowError so
the CLI can map failures onto exit codes in one place.
"""

from typing import List, Optional


class FederatedFlowError(Exception):
    """Base class for all package errors"""


class InvalidArgumentError(FederatedFlowError, ValueError):
    """An operation received an argument outside its documented domain"""


class DataFormatError(FederatedFlowError, ValueError):
    """A dataset, matrix or manifest file could not be parsed"""


class ConfigError(FederatedFlowError):
    """Configuration file missing, unreadable or invalid"""

    def __init__(self, message: str, field_errors: Optional[List[str]] = None):
        self.field_errors = list(field_errors or [])
        if self.field_errors:
            message = message + "\n" + "\n".join(f"  - {e}" for e in self.field_errors)
        super().__init__(message)


class DivergedError(FederatedFlowError, RuntimeError):
    """Training produced a non-finite loss"""

    def __init__(
        self,
        message: str,
        client_id: Optional[int] = None,
        step: Optional[int] = None,
        loss: Optional[float] = None,
    ):
        self.client_id = client_id
        self.step = step
        self.loss = loss
        self.diverged = True
        details = []
        if client_id is not None:
            details.append(f"client={client_id}")
        if step is not None:
            details.append(f"step={step}")
        if loss is not None:
            details.append(f"loss={loss}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
