"""Exception hierarchy shared across the package."""


class DecorError(Exception):
    """Base class for all errors raised by :mod:`decor`."""


class InvalidArgumentError(DecorError, ValueError):
    """An argument violates a documented precondition."""


class ParseError(DecorError):
    """A file (WAV, manifest, checkpoint) could not be parsed."""


class UnsupportedFormatError(ParseError):
    """The file parses but uses an encoding we do not read."""


class InsufficientDecayError(DecorError, ValueError):
    """An energy decay function does not span the requested fit range."""


class TrainingDivergenceError(DecorError, RuntimeError):
    """The training loss became non-finite.

    ``diagnostics`` holds whatever the trainer could gather at the moment of
    failure (epoch, step, last finite loss, parameter norms).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
