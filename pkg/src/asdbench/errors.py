"""Exception hierarchy. ``exit_code`` maps onto the CLI exit status."""


class AsdError(Exception):
    exit_code = 2


class ParseError(AsdError):
    pass


class FormatError(AsdError):
    pass


class ConfigError(AsdError):
    pass


class ShapeError(AsdError):
    pass


class InputError(AsdError):
    pass


class DataError(AsdError):
    exit_code = 3


class IntegrityError(DataError):
    pass


class DivergenceError(AsdError):
    pass


class DegenerateDataError(DataError):
    pass


class DomainError(DataError):
    pass


class MetricUndefinedError(DataError):
    pass


class CompletenessError(DataError):
    pass


class ReconciliationError(DataError):
    pass
