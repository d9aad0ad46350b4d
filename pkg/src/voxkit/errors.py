"""Exception types shared across the toolkit."""


class VoxkitError(Exception):
    """Base class for all toolkit errors."""


class AudioFormatError(VoxkitError):
    """File is not a readable PCM WAV (bad container, codec, or layout)."""


class TruncatedAudioError(VoxkitError):
    """WAV header promises more payload than the file contains."""


class SilentAudioError(VoxkitError):
    """Recording has no speech-active frames to work with."""


class DictionaryRangeError(VoxkitError):
    """A digit run is outside what the number dictionary can express."""

    def __init__(self, value: int, offset: int, message: str = ""):
        self.value = value
        self.offset = offset
        super().__init__(
            message or f"number {value} at offset {offset} is not expressible"
        )


class InfeasibleAlignmentError(VoxkitError):
    """Audio is too short for the phone sequence under the duration floor."""


class ManifestError(VoxkitError):
    """Manifest file is unreadable or structurally broken."""


class SynthesisError(VoxkitError):
    """Text cannot be synthesized; `missing` lists the units we lack."""

    def __init__(self, message: str, missing: list[str] | None = None):
        self.missing = missing or []
        super().__init__(message)
