"""Error taxonomy shared across the pipeline.

Every exception carries a stable ``code`` string; the CLI maps codes to
exit statuses.
"""

from __future__ import annotations


class LevdexError(Exception):
    """Base class for all pipeline errors."""

    code = "ERROR"


class ReservedValueError(LevdexError):
    """A state value or key violates the serialization grammar."""

    code = "RESERVED_VALUE"


class ParseError(LevdexError):
    """Strict-mode state parsing failed.

    Attributes:
        offset: byte offset of the first offending character.
    """

    code = "PARSE_ERROR"

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class SchemaError(LevdexError):
    code = "SCHEMA_ERROR"


class ArtifactIOError(LevdexError):
    code = "IO_ERROR"


class VersionMismatchError(LevdexError):
    code = "VERSION_MISMATCH"


class DuplicateDocError(LevdexError):
    code = "DUPLICATE_DOC"


class InsufficientCandidatesError(LevdexError):
    code = "INSUFFICIENT_CANDIDATES"


class DimMismatchError(LevdexError):
    code = "DIM_MISMATCH"


class NonfiniteError(LevdexError):
    code = "NONFINITE"


class EmptyIndexError(LevdexError):
    code = "EMPTY_INDEX"


class TooManyResultsError(LevdexError):
    code = "TOO_MANY_RESULTS"


class MissingGoldError(LevdexError):
    code = "MISSING_GOLD"


class MissingParamsError(LevdexError):
    code = "MISSING_PARAMS"


class EmptyEvalError(LevdexError):
    code = "EMPTY_EVAL"


class ConfigError(LevdexError):
    code = "CONFIG_ERROR"


class FingerprintMismatchWarning(UserWarning):
    """Index queried alongside an encoder it was not paired with."""
