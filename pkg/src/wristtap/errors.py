"""Exception types shared across the pipeline."""


class WristtapError(Exception):
    """Base class for all errors raised by this package."""


class ZeroNormQuaternion(WristtapError):
    """Quaternion with (near-)zero norm cannot be normalized."""


class EmptySeries(WristtapError):
    """An operation that needs at least one sample got an empty series."""


class InsufficientSamples(WristtapError):
    """Fewer samples than the operation can integrate over."""


class MissingSensor(WristtapError):
    """A required sensor has no data in the stream or window."""


class MalformedRecord(WristtapError):
    """A dataset file contains a record that cannot be parsed.

    Carries the file path and 1-based line number of the offending record.
    """

    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class DanglingReference(WristtapError):
    """An event or span cites a user/session with no sensor stream."""


class SchemaMismatch(WristtapError):
    """Feature vector does not match the model's feature schema."""


class SingleClassTrainingSet(WristtapError):
    """Training data contains only one class."""


class SingleClassTrials(WristtapError):
    """Score set contains only one class; error rates are undefined."""


class EmptySplit(WristtapError):
    """A protocol split produced an empty train or test side."""


class InsufficientEnrollment(WristtapError):
    """Requested enrollment size exceeds the available tap gestures."""


class ConfigError(WristtapError):
    """Run configuration is invalid; message names the offending field."""
