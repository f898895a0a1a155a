"""Exception hierarchy shared by every ppgvc module.

All domain errors derive from :class:`PpgVcError` so callers (and the CLI)
can separate them from programming errors.
"""


class PpgVcError(Exception):
    """Base class for domain errors."""


class EmptyInput(PpgVcError):
    pass


class FrameCountMismatch(PpgVcError):
    pass


class DimensionMismatch(PpgVcError):
    pass


class InvalidF0(PpgVcError):
    pass


class InvalidConfig(PpgVcError):
    pass


class ParseError(PpgVcError):
    pass


class InvalidValue(PpgVcError):
    pass


class LanguageMismatch(PpgVcError):
    pass


class DuplicateLanguage(PpgVcError):
    pass


class IndexOutOfRange(PpgVcError):
    pass


class DivergenceDetected(PpgVcError):
    """Training produced a non-finite loss.  ``history`` holds what was recorded."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class MissingPpg(PpgVcError):
    pass


class MissingReference(PpgVcError):
    pass


class SampleRateMismatch(PpgVcError):
    pass


class IoError(PpgVcError):
    pass
