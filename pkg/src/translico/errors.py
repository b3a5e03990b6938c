"""Exception hierarchy shared by every translico module."""


class TranslicoError(Exception):
    """Base class; the CLI maps these to exit status 1."""


class ConfigError(TranslicoError, ValueError):
    pass


# romanizer
class RuleTableInvalid(TranslicoError):
    pass


class ParseError(RuleTableInvalid):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = f"{path}:{line}: " if line is not None else ""
        super().__init__(where + message)


class DuplicateRule(ParseError):
    pass


class NonAsciiReplacement(ParseError):
    pass


# corpus
class EmptyCorpus(TranslicoError):
    pass


class InsufficientData(TranslicoError):
    pass


# tensor / encoder
class ShapeMismatch(TranslicoError, ValueError):
    pass


class DegenerateNorm(TranslicoError, ArithmeticError):
    pass


class NonScalarLoss(TranslicoError):
    pass


class IdOutOfRange(TranslicoError, IndexError):
    pass


class EmptyPool(TranslicoError):
    pass


# objectives / trainer
class NoContent(TranslicoError):
    pass


class EmptyMaskSet(TranslicoError):
    pass


class NonFinite(TranslicoError, ArithmeticError):
    pass


class NonFiniteLoss(NonFinite):
    pass


class StreamExhausted(TranslicoError):
    pass


# eval
class InsufficientGroups(TranslicoError):
    pass


class RankDeficientWarning(UserWarning):
    """Covariance had fewer than two positive eigenvalues; missing axes are zero-filled."""
