"""Exception hierarchy.

``ConfigError`` subclasses signal a bad request (CLI exit code 2),
``DataError`` subclasses signal bad or inconsistent input data (exit code 3).
"""


class EgoSpeedError(Exception):
    pass


class ConfigError(EgoSpeedError, ValueError):
    pass


class DataError(EgoSpeedError):
    pass


class CropOutOfBounds(ConfigError):
    pass


class TcRequiresFullFrame(ConfigError):
    pass


class ExtentMismatch(DataError):
    pass


class NoValidPixels(DataError):
    pass


class FormatError(DataError):
    pass


class BadMagic(FormatError):
    pass


class BadHeader(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class BadPng(FormatError):
    pass


class WrongChannelCount(FormatError):
    pass


class MissingFrameFile(DataError):
    pass


class TooFewFields(FormatError):
    pass


class NonNumericField(FormatError):
    pass


class CountMismatch(DataError):
    pass


class UnknownId(ConfigError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class EmptySeries(DataError):
    pass


class EmptySequence(DataError):
    pass


class DegenerateFit(DataError):
    pass


class NoOverlap(DataError):
    pass
