"""Exception hierarchy shared by all vpcl modules."""


class VpclError(Exception):
    """Base class for every error raised by vpcl."""


class ConfigError(VpclError, ValueError):
    """Invalid parameters, configuration text or mismatched inputs."""

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors else [message]


class SingularInputError(VpclError, ValueError):
    """Exact Coulomb kernel evaluated at zero separation."""


class DomainError(VpclError, ValueError):
    """Arguments outside the mathematical domain of an operation."""


class NumericalAbort(VpclError, ArithmeticError):
    """Non-finite state detected during time integration."""

    def __init__(self, message, frame_index):
        super().__init__(f"{message} (frame {frame_index})")
        self.frame_index = frame_index
