"""Exception types shared across the toolkit."""


class DevshiftError(Exception):
    """Base class for all toolkit errors."""


class WavFormatError(DevshiftError):
    """Malformed RIFF/WAVE container. ``field`` names the offending header field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class UnsupportedWavError(DevshiftError):
    """Well-formed WAV whose encoding, bit depth or channel count is not supported."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class SampleRateMismatch(DevshiftError, ValueError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"sample rate mismatch: expected {expected} Hz, got {got} Hz")
        self.expected = expected
        self.got = got


class SilentInputError(DevshiftError, ValueError):
    """Deconvolution of an all-zero recording."""


class FilterbankResolutionError(DevshiftError, ValueError):
    """A mel filter is narrower than one FFT bin."""


class SignalTooShortError(DevshiftError, ValueError):
    pass


class ManifestError(DevshiftError, ValueError):
    """Invalid manifest. ``kind`` is one of missing_column, empty, duplicate, invalid."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class EmptyBankError(DevshiftError, ValueError):
    pass


class ConfigError(DevshiftError, ValueError):
    """Invalid run configuration. ``key`` names the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
