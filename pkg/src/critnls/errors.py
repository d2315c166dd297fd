"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so library code should raise the
narrowest class that fits.
"""


class CritNLSError(Exception):
    """Base class for all package errors."""

    exit_code = 1
    kind = "error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": self.kind, "message": str(self)}
        if self.details:
            out["details"] = self.details
        return out


class DomainError(CritNLSError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    exit_code = 3
    kind = "domain_error"


class ConfigError(CritNLSError, ValueError):
    """Invalid or inconsistent experiment configuration."""

    exit_code = 3
    kind = "config_error"


class NumericalError(CritNLSError, ArithmeticError):
    """A numerical procedure failed (non-convergence, singular solve)."""

    exit_code = 4
    kind = "numerical_error"


class ContractError(CritNLSError, TypeError):
    """An operation was called with arguments violating its contract."""

    exit_code = 4
    kind = "contract_error"


class UnsupportedOperation(CritNLSError):
    """Operation is not defined for the given object kind."""

    exit_code = 3
    kind = "unsupported_operation"
