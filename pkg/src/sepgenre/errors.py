"""Exception hierarchy shared by every module in the package."""


class SepGenreError(Exception):
    """Base class for all errors raised by sepgenre."""


class FormatError(SepGenreError):
    """A file does not follow the expected container layout."""


class UnsupportedError(SepGenreError):
    """A well-formed file uses an encoding we do not handle."""


class TruncationError(FormatError):
    """A file ends before the amount of data its header declares."""


class WriteError(SepGenreError):
    pass


class ConfigError(SepGenreError, ValueError):
    """Invalid parameters or configuration values."""


class EmptyInputError(SepGenreError, ValueError):
    pass


class InsufficientLengthError(SepGenreError, ValueError):
    pass


class ShapeError(SepGenreError, ValueError):
    pass


class MissingStemError(SepGenreError):
    def __init__(self, stem: str, where: str = ""):
        self.stem = stem
        msg = f"missing stem {stem!r}"
        if where:
            msg += f" in {where}"
        super().__init__(msg)


class IncompatibleStemsError(SepGenreError):
    pass


class LabelError(SepGenreError, ValueError):
    pass


class DivergenceError(SepGenreError, ArithmeticError):
    """Training produced a non-finite loss."""


class StratificationError(SepGenreError, ValueError):
    pass


class SummaryError(SepGenreError):
    pass
