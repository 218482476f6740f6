"""Exception hierarchy.

Every error raised by the package derives from :class:`EventcastError`; the CLI
prints ``<ClassName>: <message>`` on a single line and exits nonzero.
"""


class EventcastError(Exception):
    exit_code = 1


class ShapeError(EventcastError, ValueError):
    exit_code = 2


class ConfigError(EventcastError, ValueError):
    exit_code = 2


class ContractError(EventcastError, ValueError):
    exit_code = 2


class NumericDomainError(EventcastError, FloatingPointError):
    exit_code = 3


class InputError(EventcastError, ValueError):
    exit_code = 2


class IngestError(EventcastError):
    exit_code = 4


class FormatError(EventcastError, ValueError):
    exit_code = 4


class AlignmentError(EventcastError):
    exit_code = 5

    def __init__(self, message, deficit=0):
        super().__init__(message)
        self.deficit = deficit


class DatasetError(EventcastError):
    exit_code = 5


class GenerationError(EventcastError):
    exit_code = 6

    def __init__(self, message, chunk_index=None):
        super().__init__(message)
        self.chunk_index = chunk_index


class ParseError(EventcastError):
    exit_code = 6

    def __init__(self, message, raw=""):
        super().__init__(message)
        self.raw = raw


class RangeError(EventcastError, ValueError):
    exit_code = 6


class AugmentationError(EventcastError):
    """Some counterfactual targets failed; ``records`` holds the successes."""

    exit_code = 6

    def __init__(self, message, records=(), failures=()):
        super().__init__(message)
        self.records = list(records)
        self.failures = list(failures)


class SamplingError(EventcastError):
    exit_code = 6


class TrainingError(EventcastError):
    exit_code = 7

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DataError(EventcastError):
    exit_code = 7


class SpecError(EventcastError, ValueError):
    exit_code = 2


class MissingArtifactError(EventcastError):
    exit_code = 8
