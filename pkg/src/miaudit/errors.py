"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MiauditError(Exception):
    exit_code = 1


class ConfigurationError(MiauditError, ValueError):
    exit_code = 2


class DataValidationError(MiauditError, ValueError):
    exit_code = 3


class ProtocolError(DataValidationError):
    """Split/shadow protocol cannot be carried out on the given data."""


class ComparisonError(DataValidationError):
    """Two reports or score sets are not comparable."""


class UndefinedMetricError(DataValidationError):
    pass


class CalibrationNotApplicable(MiauditError):
    exit_code = 2


class CalibrationCoverageError(DataValidationError):
    pass


class TrainingDivergenceError(MiauditError, ArithmeticError):
    exit_code = 4

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class InsufficientKnowledgeError(MiauditError):
    exit_code = 5
