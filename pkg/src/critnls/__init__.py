"""Numerical toolkit for the energy-critical nonlinear Schroedinger equation
with additive or multiplicative Stratonovich noise in dimensions 3 to 5."""

__version__ = "0.1.0"

from .errors import (ConfigError, ContractError, CritNLSError, DomainError, NumericalError,
                     UnsupportedOperation)

__all__ = ["__version__", "CritNLSError", "DomainError", "ConfigError", "NumericalError",
           "ContractError", "UnsupportedOperation"]
