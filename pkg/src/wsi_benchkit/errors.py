"""Exception taxonomy shared across the toolkit.

``ValidationError`` subclasses signal bad inputs (CLI exit code 2);
``RuntimeFailure`` subclasses signal failures during computation (exit code 3).
"""


class BenchkitError(Exception):
    pass


class ValidationError(BenchkitError):
    pass


class RuntimeFailure(BenchkitError):
    pass


# -- score ingestion ---------------------------------------------------------

class MissingCell(ValidationError):
    pass


class DuplicateRow(ValidationError):
    pass


class ValueOutOfRange(ValidationError):
    pass


class MalformedRow(ValidationError):
    pass


class SingleClassRun(ValidationError):
    pass


# -- relative-performance metric ---------------------------------------------

class EnumerationTooLarge(ValidationError):
    pass


class ExtractorSetMismatch(ValidationError):
    pass


# -- bootstrap ----------------------------------------------------------------

class PairMismatch(ValidationError):
    pass


class DegenerateResample(RuntimeFailure):
    pass


# -- MIL engine ----------------------------------------------------------------

class DimensionMismatch(ValidationError):
    pass


class NonFiniteLoss(RuntimeFailure):
    pass


class EmptySplit(ValidationError):
    pass


class ClassMissing(ValidationError):
    pass


# -- preprocessing -------------------------------------------------------------

class SlideTooSmall(ValidationError):
    pass


class InsufficientTissue(ValidationError):
    pass


class DegenerateCovariance(ValidationError):
    pass


class CacheCorrupt(RuntimeFailure):
    pass


class KeyMissing(ValidationError):
    pass


# -- latent analysis -----------------------------------------------------------

class ZeroVector(ValidationError):
    pass


class VariantMissing(ValidationError):
    pass


class InsufficientClasses(ValidationError):
    pass


# -- reporting -------------------------------------------------------------------

class EmptyReport(ValidationError):
    pass
