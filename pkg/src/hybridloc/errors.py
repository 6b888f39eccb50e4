"""Exception types raised across the package."""


class LocalizationError(Exception):
    """Base class for all package errors."""


class DisconnectedNetworkError(LocalizationError):
    pass


class ConfigurationError(LocalizationError, ValueError):
    pass


class DegenerateMeasurementError(LocalizationError):
    pass


class DegenerateGeometryError(LocalizationError, ZeroDivisionError):
    pass


class DivergenceError(LocalizationError, FloatingPointError):
    def __init__(self, message, iteration=None, node=None):
        super().__init__(message)
        self.iteration = iteration
        self.node = node


class ProtocolError(LocalizationError):
    """A node tried to read a message that was never delivered to it."""

    def __init__(self, message, sender=None, round=None):
        super().__init__(message)
        self.sender = sender
        self.round = round


class FilterDivergenceError(LocalizationError):
    def __init__(self, message, tick=None):
        super().__init__(message)
        self.tick = tick
