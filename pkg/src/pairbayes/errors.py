"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and the process exit
status the command line front end uses for it.
"""


class PairBayesError(Exception):
    code = "ERROR"
    exit_code = 1


class UsageError(PairBayesError):
    code = "USAGE"
    exit_code = 1


class UnsupportedCriterionError(UsageError):
    code = "UNSUPPORTED_CRITERION"


# -- data problems (exit 2) -------------------------------------------------

class DataError(PairBayesError):
    code = "DATA"
    exit_code = 2


class TieWithoutDavidsonError(DataError):
    code = "TIE_WITHOUT_DAVIDSON"


class MissingColumnError(DataError):
    code = "MISSING_COLUMN"


class ConstantCovariateError(DataError):
    code = "CONSTANT_COVARIATE"


class SinglePlayerError(DataError):
    code = "SINGLE_PLAYER"


class EmptyDatasetError(DataError):
    code = "EMPTY_DATASET"


class EmptyAfterTieRemovalError(EmptyDatasetError):
    code = "EMPTY_AFTER_TIE_REMOVAL"


class BadResultValueError(DataError):
    code = "BAD_RESULT_VALUE"


class UnknownPlayerError(DataError):
    code = "UNKNOWN_PLAYER"


class UnknownSubjectError(DataError):
    code = "UNKNOWN_SUBJECT"


class MissingCovariateError(DataError):
    code = "MISSING_COVARIATE"


class ModelSpecError(DataError):
    code = "MODEL_SPEC"


# -- numerical / sampler problems (exit 3) -----------------------------------

class NumericalError(PairBayesError):
    code = "NUMERICAL"
    exit_code = 3


class NonFiniteDensityError(NumericalError):
    code = "NON_FINITE_DENSITY"


class NonFiniteGradientError(NumericalError):
    code = "NON_FINITE_GRADIENT"


class SamplerError(NumericalError):
    code = "SAMPLER"


class AllDivergentError(SamplerError):
    code = "ALL_DIVERGENT"


class NonFiniteInitError(SamplerError):
    code = "NON_FINITE_INIT"


class ZeroVarianceError(NumericalError):
    code = "ZERO_VARIANCE"


class TooFewTailSamplesError(NumericalError):
    code = "TOO_FEW_TAIL_SAMPLES"


class DegenerateDrawsError(NumericalError):
    code = "DEGENERATE_DRAWS"


# -- archive problems (exit 4) -----------------------------------------------

class ArchiveError(PairBayesError):
    code = "ARCHIVE"
    exit_code = 4


class VersionMismatchError(ArchiveError):
    code = "VERSION_MISMATCH"


class CorruptArchiveError(ArchiveError):
    code = "CORRUPT_ARCHIVE"


class DataFingerprintMismatchError(ArchiveError):
    code = "DATA_FINGERPRINT_MISMATCH"
