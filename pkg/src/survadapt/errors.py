"""Exception hierarchy. Every error carries a stable ``code`` string."""


class SurvAdaptError(ValueError):
    code = "ERROR"


class ZeroComparablePairs(SurvAdaptError):
    code = "ZERO_COMPARABLE_PAIRS"


class NoEvents(SurvAdaptError):
    code = "NO_EVENTS"


class DimensionMismatch(SurvAdaptError):
    code = "DIMENSION_MISMATCH"


class LengthMismatch(SurvAdaptError):
    code = "LENGTH_MISMATCH"


class TiedScores(SurvAdaptError):
    code = "TIED_SCORES"


class IndexNotCensored(SurvAdaptError):
    code = "INDEX_NOT_CENSORED"


class EmptyDataset(SurvAdaptError):
    code = "EMPTY_DATASET"


class EmptyHypothesisSet(SurvAdaptError):
    code = "EMPTY_HYPOTHESIS_SET"


class WeightsNotNormalized(SurvAdaptError):
    code = "WEIGHTS_NOT_NORMALIZED"


class FractionOutOfRange(SurvAdaptError):
    code = "FRACTION_OUT_OF_RANGE"


class ConfigInvalid(SurvAdaptError):
    code = "CONFIG_INVALID"


class TooFewRecords(SurvAdaptError):
    code = "TOO_FEW_RECORDS"


class AllZeroDifferences(SurvAdaptError):
    code = "ALL_ZERO_DIFFERENCES"


class NoTreatmentLabels(SurvAdaptError):
    code = "NO_TREATMENT_LABELS"


class KTooSmall(SurvAdaptError):
    code = "K_TOO_SMALL"


class MatrixInvalid(SurvAdaptError):
    code = "MATRIX_INVALID"


class IncompleteTable(SurvAdaptError):
    code = "INCOMPLETE_TABLE"


class ParseError(SurvAdaptError):
    code = "PARSE_ERROR"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(SurvAdaptError):
    code = "SCHEMA_ERROR"


class LabelError(SurvAdaptError):
    code = "LABEL_ERROR"


class CalibrationFailed(SurvAdaptError):
    code = "CALIBRATION_FAILED"
