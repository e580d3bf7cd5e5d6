from __future__ import annotations

import logging
from typing import Optional

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class HistReconError(Exception):
    pass


class MalformedRecord(HistReconError):
    line_number: int

    def __init__(self, message: str, line_number: int = -1):
        if line_number >= 0:
            message = "line %d: %s" % (line_number, message)
        super().__init__(message)
        self.line_number = line_number


class DuplicateVisitId(MalformedRecord):
    pass


class UnknownProductivityLevel(HistReconError):
    token: str

    def __init__(self, token: str, line_number: int = -1):
        message = "Unknown productivity level %r" % token
        if line_number >= 0:
            message = "line %d: %s" % (line_number, message)
        super().__init__(message)
        self.token = token
        self.line_number = line_number


class NoPrecedingVisit(HistReconError):
    pass


class MissingHistory(HistReconError):
    pass


class MissingGroundTruth(HistReconError):
    pass


class EmptyDataset(HistReconError):
    pass


class WidthMismatch(HistReconError):
    pass


class VocabularyMismatch(HistReconError):
    pass


class ModelFormatError(HistReconError):
    pass


class MissingManifest(HistReconError):
    pass


class ProfileError(HistReconError):
    pass


class ConfigError(HistReconError):
    pass


class UsageError(HistReconError):
    pass


def error_to_exit_code(error: BaseException) -> Optional[int]:
    """Translate an exception raised by a command into a process exit code.

    Returns ``None`` for exceptions that are not ours to handle, so the caller can
    re-raise them.
    """
    if isinstance(error, (UsageError, ConfigError, ProfileError)):
        log.debug("Usage error: %s", error)
        return EXIT_USAGE
    if isinstance(error, (HistReconError, OSError, ValueError)):
        log.debug("Data error: %s", error)
        return EXIT_DATA
    return None
