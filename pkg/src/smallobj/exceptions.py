"""Exception hierarchy shared by all toolkit modules."""


class SmallObjError(Exception):
    """Base class for every error raised by the toolkit."""


class AnnotationParseError(SmallObjError):
    """Malformed XML. Carries the line and column reported by the parser."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class SchemaError(SmallObjError):
    """A required VOC element is missing or unreadable."""

    def __init__(self, field, message=None):
        super().__init__(message or f"missing or invalid required field: {field}")
        self.field = field


class GeometryError(SmallObjError, ValueError):
    pass


class ValidationError(SmallObjError, ValueError):
    pass


class PoolLookupError(SmallObjError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class NoPositivesError(SmallObjError):
    """Average precision is undefined for a class without eligible ground truth."""


class TrainingError(SmallObjError, ArithmeticError):
    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


class DatasetIOError(SmallObjError, OSError):
    """A dataset file is missing or cannot be decoded."""


class ProbabilityDomainError(SmallObjError, ValueError):
    """A discriminator output is not a probability."""
