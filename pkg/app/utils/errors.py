"""Exception hierarchy shared by the assimilation engine, the CLI and the HTTP layer."""


class DAError(Exception):
    """Base class for every expected failure raised by the toolkit."""


class GridError(DAError):
    pass


class ParameterError(DAError):
    pass


class StateError(DAError):
    pass


class ProblemError(DAError):
    pass


class PreconditionerError(DAError):
    pass


class DecompositionError(DAError):
    pass


class FieldFormatError(DAError):
    pass


class ConfigError(DAError):
    pass
