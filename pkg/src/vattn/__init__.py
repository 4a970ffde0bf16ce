"""Variational channel attention for multi-domain density estimation."""

from vattn.errors import (
    DegenerateDataError,
    InvalidArgumentError,
    InvalidStateError,
    NumericalDomainError,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateDataError",
    "InvalidArgumentError",
    "InvalidStateError",
    "NumericalDomainError",
]
