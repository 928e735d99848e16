"""Exception hierarchy.

Every error raised on purpose by the package derives from ``AmdiffError`` and
belongs to one of two families: ``DataError`` (bad input records, files or
strings) and ``ContractError`` (a caller or a pluggable component broke an
operation's contract). The CLI maps the families to exit codes.
"""


class AmdiffError(Exception):
    pass


class DataError(AmdiffError, ValueError):
    pass


class ContractError(AmdiffError, ValueError):
    pass


# tokenization / chemistry
class UnknownToken(DataError):
    pass


class TooLong(DataError):
    pass


class SpecialTokenPresent(ContractError):
    pass


class EmptyCorpus(DataError):
    pass


class UnsupportedToken(DataError):
    pass


class UnsupportedFeature(DataError):
    pass


class SmilesSyntaxError(DataError):
    pass


class ValenceError(DataError):
    pass


# diffusion
class TimeOutOfRange(ContractError):
    pass


class TimeOrder(ContractError):
    pass


class DenoiserContractViolation(ContractError):
    pass


class DimensionMismatch(ContractError):
    pass


class NegativeWeight(ContractError):
    pass


class NoConsistentSequence(DataError):
    pass


class MissingCLS(ContractError):
    pass


class DivergenceDetected(AmdiffError, RuntimeError):
    pass


class NonpositiveSigma(ContractError):
    pass


class PredictorContractViolation(ContractError):
    pass


# peptides
class UnknownResidue(DataError):
    pass


class MissingAttachmentSite(DataError):
    pass


class UnsupportedBondType(DataError):
    pass


class SiteNotReactive(DataError):
    pass


class TerminusConsumed(DataError):
    pass


class UnknownModification(DataError):
    pass


class NotAPeptide(DataError):
    pass


class AmbiguousDecomposition(DataError):
    pass


# data preparation
class UnparseableRecord(DataError):
    pass


class NonpositiveMIC(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class OverflowToInfinity(DataError):
    pass


class AlreadyScaled(ContractError):
    pass


class TooFewStrains(DataError):
    pass


class DegenerateVariance(DataError):
    def __init__(self, message, r2=None):
        super().__init__(message)
        self.r2 = r2


class SingleClass(DataError):
    pass


# fusion
class EmptyKeys(ContractError):
    pass


class EmptyEnsemble(ContractError):
    pass
