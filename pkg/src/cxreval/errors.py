"""Exception hierarchy.

Everything raised for bad *data* derives from :class:`CxrEvalError`; the CLI
maps those to exit status 1.
"""


class CxrEvalError(Exception):
    """Base class for data and validation errors."""


class DataError(CxrEvalError):
    """A malformed input file. Carries the path and 1-based line when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class DegenerateClassBalance(CxrEvalError):
    """ROC-type metrics need at least one positive and one negative."""


class UndefinedMetric(CxrEvalError):
    """A metric has no value on this data (e.g. specificity with no negatives)."""


class UnstableMetric(CxrEvalError):
    """Too many bootstrap replicates were undefined even after redraws."""

    def __init__(self, failure_rate):
        self.failure_rate = failure_rate
        super().__init__(
            f"unstable metric: undefined on {failure_rate:.2%} of bootstrap replicates"
        )


class NoPositives(CxrEvalError):
    """FROC analysis requested for a class with no ground-truth boxes."""


class StructureMismatch(CxrEvalError):
    """Two tables that should share a layout do not."""


class DicomError(CxrEvalError):
    """Base class for DICOM parsing and decoding failures."""


class DicomParseError(DicomError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class UnsupportedEncoding(DicomError):
    def __init__(self, uid):
        self.uid = uid
        super().__init__(f"unsupported encoding: transfer syntax {uid}")


class NoPixelData(DicomError):
    def __init__(self):
        super().__init__("no pixel data: tag (7FE0,0010) is missing")


class DegenerateWindow(DicomError):
    pass


class OutputError(CxrEvalError):
    """Writing an output file failed."""

    def __init__(self, path, reason):
        self.path = path
        super().__init__(f"cannot write {path}: {reason}")
