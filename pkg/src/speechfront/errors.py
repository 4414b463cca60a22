"""Exception hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI maps it to.
"""


class SpeechFrontError(Exception):
    exit_code = 1


class DataError(SpeechFrontError):
    """Input data is malformed, misaligned or degenerate."""

    exit_code = 1


class FormatError(DataError):
    pass


class UnsupportedFormatError(DataError):
    pass


class ConfigError(SpeechFrontError):
    exit_code = 2


class StateError(SpeechFrontError):
    """An object is used before it is ready (e.g. an untrained model)."""

    exit_code = 2


class NumericalError(SpeechFrontError):
    exit_code = 3


class TrainingError(NumericalError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class AdaptationError(NumericalError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
