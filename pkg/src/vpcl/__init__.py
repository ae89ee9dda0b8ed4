from .errors import ConfigError, SingularInputError, NumericalAbort, DomainError, VpclError
