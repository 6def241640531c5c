"""Exception hierarchy shared by every module."""


class HcvaeError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(HcvaeError, ValueError):
    pass


class NumericError(HcvaeError, ArithmeticError):
    pass


class NonFiniteLossError(NumericError):
    """Training produced NaN/Inf; carries where it happened."""

    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")


class ConfigurationError(HcvaeError, ValueError):
    pass


class InputTooShortError(HcvaeError, ValueError):
    pass


class WavError(HcvaeError):
    """Base for WAV reading failures."""


class WavNotFoundError(WavError, FileNotFoundError):
    pass


class WavFormatError(WavError, ValueError):
    """Malformed or truncated RIFF/WAVE structure."""


class UnsupportedCodecError(WavError, ValueError):
    pass


class IngestionError(HcvaeError, ValueError):
    pass


class UnknownLabelError(HcvaeError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown label"


class ModeMismatchError(HcvaeError, ValueError):
    pass


class CheckpointError(HcvaeError):
    """Base for checkpoint load failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class UndefinedAucError(HcvaeError, ValueError):
    pass
