"""Exception hierarchy. Each class carries the CLI exit status it maps to."""


class MixevoError(Exception):
    exit_code = 1


class ParameterError(MixevoError, ValueError):
    """A precondition on a numeric parameter does not hold."""

    exit_code = 2


class ParseError(MixevoError, ValueError):
    """An input file could not be parsed or failed validation."""

    exit_code = 3


class InfeasibleError(MixevoError):
    """The requested state space is larger than the configured cap."""

    exit_code = 4

    def __init__(self, message, size=None):
        super().__init__(message)
        self.size = size


class NonConvergenceError(MixevoError):
    """An iteration hit its step limit. ``last`` holds the final iterate."""

    exit_code = 5

    def __init__(self, message, last=None, steps=None):
        super().__init__(message)
        self.last = last
        self.steps = steps


class StructuralError(MixevoError):
    """The chain is not ergodic (reducible or periodic)."""

    exit_code = 6

    def __init__(self, message, unreachable=(), period=None):
        super().__init__(message)
        self.unreachable = tuple(unreachable)
        self.period = period


class NotReversibleError(MixevoError):
    exit_code = 6
