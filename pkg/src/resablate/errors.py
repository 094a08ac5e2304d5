"""Exception types shared across the toolkit."""


class ResablateError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ResablateError):
    """Invalid configuration: bad shapes, unknown addresses, malformed configs."""


class ShapeError(ConfigError):
    """Tensor/kernel shape mismatch."""


class NumericError(ResablateError):
    """An engine operation produced NaN or Inf."""


class DataError(ResablateError):
    """Invalid data: out-of-range labels, empty datasets, non-binary masks."""


class DatasetFormatError(DataError):
    """A dataset file does not match its documented binary layout."""


class DegenerateBatchError(DataError):
    """Batch statistics are undefined (fewer than two values per channel)."""


class UnsupportedTargetError(ResablateError):
    """The requested layer slot has no closed form (stem or head)."""


class CheckpointError(ResablateError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or malformed record structure."""


class CheckpointVersionError(CheckpointError):
    """Unsupported checkpoint format version."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the declared payload and checksum."""


class CheckpointChecksumError(CheckpointError):
    """Stored checksum does not match the file contents."""


class ReportError(ResablateError):
    """Malformed or inconsistent triviality report."""


class FingerprintMismatchError(ResablateError):
    """Report was produced from a different model than the one supplied."""
