"""Exception hierarchy shared by every lsth module."""


class LsthError(Exception):
    pass


# workload model / task library

class DocumentSyntaxError(LsthError):
    """The workload document is not well-formed YAML or has the wrong shape."""


class ValidationError(LsthError):
    pass


class GeneratorNotFound(LsthError):
    pass


class GeneratorError(LsthError):
    pass


class TaskNotFound(LsthError):
    pass


class EmptyTask(LsthError):
    pass


class MissingVariable(LsthError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable ${{{name}}}")
        self.name = name


class ConfigError(LsthError):
    pass


# connector / engine

class TargetUnreachable(LsthError):
    pass


class ParseError(LsthError):
    pass


class ExecError(LsthError):
    """Semantic failure while executing a statement."""


class UnknownTable(ExecError):
    pass


class TableExists(ExecError):
    pass


class SchemaMismatch(ExecError):
    pass


class VersionNotFound(ExecError):
    pass


class ConflictError(ExecError):
    """An optimistic commit could not be published."""


class IOFailure(LsthError):
    pass


# telemetry / metrics

class FormatError(LsthError):
    pass


class InsufficientData(LsthError):
    pass


class DivisionByZero(LsthError, ZeroDivisionError):
    pass


class UnknownPhase(LsthError):
    pass
