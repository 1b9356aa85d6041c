"""Exception types shared across the package."""


class SharpPathError(Exception):
    pass


class NumericalError(SharpPathError):
    """A non-finite (or divergent) value appeared during evaluation.

    ``node`` names the first graph node whose output was non-finite, when known.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ConfigError(SharpPathError, ValueError):
    pass


class FormatError(SharpPathError, ValueError):
    pass


class StateError(SharpPathError, RuntimeError):
    pass


class SingularityError(NumericalError):
    pass


class AlignmentUndefined(SharpPathError, ValueError):
    pass
