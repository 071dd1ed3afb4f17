class CtcIlmError(Exception):
    """Base class for package errors."""


class InputDomainError(CtcIlmError, ValueError):
    """An input lies outside the operation's domain."""


class DeadPrefixError(CtcIlmError, ValueError):
    """A posterior was requested for a prefix with zero mass."""


class EnumerationGuardError(CtcIlmError, RuntimeError):
    """Brute-force enumeration would exceed the configured bound."""


class DecodeError(CtcIlmError, RuntimeError):
    """Every hypothesis in the beam has -inf score."""


class TrainingDivergedError(CtcIlmError, RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace
