"""Exception types raised across the package."""


class IdlvError(Exception):
    """Base class for all errors raised by idlv."""


class ShapeError(IdlvError, ValueError):
    """Tensor shapes do not line up.

    ``dims`` maps a dimension name to the ``(expected, got)`` pair that failed.
    """

    def __init__(self, message, **dims):
        self.dims = dims
        if dims:
            detail = ", ".join(f"{k}: expected {v[0]}, got {v[1]}" for k, v in dims.items())
            message = f"{message} ({detail})"
        super().__init__(message)


class GradientError(IdlvError, RuntimeError):
    pass


class TrainingError(IdlvError, RuntimeError):
    pass


class DecodeError(IdlvError, ValueError):
    pass


class UnsupportedFormatError(DecodeError):
    pass


class TruncatedImageError(DecodeError):
    pass


class DatasetError(IdlvError):
    pass


class ProtocolError(IdlvError):
    pass


class UnknownClientError(ProtocolError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EvaluationError(IdlvError, ValueError):
    pass


class FormatError(IdlvError, ValueError):
    """A persisted file has the wrong magic, version or layout."""


class CheckpointError(FormatError):
    pass


class GalleryFormatError(FormatError):
    pass


class ConfigError(IdlvError, ValueError):
    pass
