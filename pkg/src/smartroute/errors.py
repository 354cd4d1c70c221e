"""Exception types raised across the routing engine."""


class SmartRouteError(Exception):
    """Base class for every error raised by this package."""


class UndefinedInputError(SmartRouteError, ValueError):
    pass


class InvalidAmountError(SmartRouteError, ValueError):
    pass


class ConfigError(SmartRouteError, ValueError):
    pass


class UnknownTerminalError(SmartRouteError, KeyError):
    pass


class UnknownGatewayError(SmartRouteError, KeyError):
    pass


class SchemaMismatchError(SmartRouteError, ValueError):
    pass


class SnapshotError(SmartRouteError, ValueError):
    pass


class UndefinedMetricError(SmartRouteError, ValueError):
    pass


class LogisticDivergenceError(SmartRouteError, ArithmeticError):
    pass


class LogOrderError(SmartRouteError, ValueError):
    pass


class NoEligibleTerminalsError(SmartRouteError, RuntimeError):
    pass


class RoutingError(SmartRouteError, KeyError):
    pass


class ModelFormatError(SmartRouteError, ValueError):
    pass
