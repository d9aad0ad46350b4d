"""Waveform I/O, resampling, activity detection, and power normalization.

Ingest is PCM WAV only (8/16/24-bit integer or 32-bit float, mono or
stereo). Compressed sources such as mp3 chapters must be converted to WAV
externally before they enter the pipeline.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import AudioFormatError, SilentAudioError, TruncatedAudioError

DEFAULT_TARGET_DBFS = -26.0
DEFAULT_VAD_SHIFT_MS = 10.0
DEFAULT_VAD_THRESHOLD_DB = 30.0
# Frames whose mean power falls below this are silent regardless of the
# relative threshold; keeps digital silence inactive even when it is the peak.
VAD_ABSOLUTE_POWER_FLOOR = 1e-10
CLIP_GUARD_PEAK = 0.99

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono waveform: float64 samples in [-1, 1] at a fixed rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional (mono)")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def channel_count(self) -> int:
        return 1


@dataclass(frozen=True)
class PowerNormResult:
    """Outcome of power normalization; `clip_limited` means the requested
    gain would have clipped and was reduced to keep the peak at 0.99."""

    clip: AudioClip
    gain: float
    clip_limited: bool


def _read_exact(data: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(data):
        raise TruncatedAudioError(f"file ends inside {what}")
    return data[offset : offset + size]


def load_wav(path: str | Path) -> AudioClip:
    """Load a PCM WAV file as a mono clip scaled to [-1, 1].

    Stereo input is averaged down to mono. Raises FileNotFoundError for a
    missing file, AudioFormatError for anything that is not supported PCM
    WAV, and TruncatedAudioError when the data chunk is cut short.
    """
    path = Path(path)
    data = path.read_bytes()

    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    offset = 12
    while offset + 8 <= len(data):
        chunk_id = data[offset : offset + 4]
        (chunk_size,) = struct.unpack("<I", data[offset + 4 : offset + 8])
        body_offset = offset + 8
        if chunk_id == b"fmt ":
            body = _read_exact(data, body_offset, min(chunk_size, 16), "fmt chunk")
            if len(body) < 16:
                raise AudioFormatError(f"{path}: fmt chunk too small")
            fmt = struct.unpack("<HHIIHH", body)
        elif chunk_id == b"data":
            payload = _read_exact(data, body_offset, chunk_size, "data chunk")
        offset = body_offset + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise AudioFormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise AudioFormatError(f"{path}: missing data chunk")

    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format == _WAVE_FORMAT_EXTENSIBLE:
        # Sub-format GUID starts with the ordinary format code.
        raise AudioFormatError(f"{path}: WAVE_FORMAT_EXTENSIBLE is not supported")
    if channels not in (1, 2):
        raise AudioFormatError(f"{path}: {channels} channels (expected 1 or 2)")
    if sample_rate <= 0:
        raise AudioFormatError(f"{path}: bad sample rate {sample_rate}")

    if audio_format == _WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(payload[: len(payload) // 2 * 2], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == _WAVE_FORMAT_PCM and bits == 8:
        raw = np.frombuffer(payload, dtype=np.uint8)
        samples = (raw.astype(np.float64) - 128.0) / 128.0
    elif audio_format == _WAVE_FORMAT_PCM and bits == 24:
        usable = len(payload) // 3 * 3
        as_bytes = np.frombuffer(payload[:usable], dtype=np.uint8).reshape(-1, 3)
        value = (
            as_bytes[:, 0].astype(np.int32)
            | (as_bytes[:, 1].astype(np.int32) << 8)
            | (as_bytes[:, 2].astype(np.int32) << 16)
        )
        value = np.where(value >= 1 << 23, value - (1 << 24), value)
        samples = value.astype(np.float64) / float(1 << 23)
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise AudioFormatError(
            f"{path}: unsupported encoding (format {audio_format}, {bits}-bit)"
        )

    if channels == 2:
        samples = samples[: len(samples) // 2 * 2].reshape(-1, 2).mean(axis=1)

    samples = np.clip(samples, -1.0, 1.0)
    return AudioClip(samples=samples, sample_rate=sample_rate)


def save_wav(clip: AudioClip, path: str | Path) -> None:
    """Write a clip as 16-bit PCM WAV."""
    path = Path(path)
    scaled = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.round(scaled * 32767.0).astype("<i2")
    payload = pcm.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        _WAVE_FORMAT_PCM,
        1,
        clip.sample_rate,
        clip.sample_rate * 2,
        2,
        16,
        b"data",
        len(payload),
    )
    path.write_bytes(header + payload)


def wav_duration_seconds(path: str | Path) -> float:
    """Duration of a WAV file without decoding the payload."""
    return load_wav(path).duration_seconds


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample with a windowed-sinc (Kaiser) polyphase filter.

    Preserves duration to within one output sample period. A plain linear
    interpolation would also satisfy the module contract (the correctness
    criterion is spectral, not kernel-specific); the polyphase filter is
    simply the better-quality default.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    ratio = Fraction(target_rate, clip.sample_rate)
    out = resample_poly(clip.samples, ratio.numerator, ratio.denominator)
    out = np.clip(out, -1.0, 1.0)
    return AudioClip(samples=out, sample_rate=target_rate)


def energy_vad(
    clip: AudioClip,
    frame_shift_ms: float = DEFAULT_VAD_SHIFT_MS,
    threshold_db_below_peak: float = DEFAULT_VAD_THRESHOLD_DB,
) -> np.ndarray:
    """Boolean activity mask over non-overlapping frames.

    A frame is active iff its log energy is within `threshold_db_below_peak`
    of the loudest frame and above the absolute silence floor.
    """
    if len(clip.samples) == 0:
        raise ValueError("clip is empty")
    hop = max(1, int(round(clip.sample_rate * frame_shift_ms / 1000.0)))
    n_frames = max(1, len(clip.samples) // hop)
    usable = clip.samples[: n_frames * hop]
    power = np.mean(usable.reshape(n_frames, hop) ** 2, axis=1)
    audible = power > VAD_ABSOLUTE_POWER_FLOOR
    if not np.any(audible):
        return np.zeros(n_frames, dtype=bool)
    log_energy = 10.0 * np.log10(np.maximum(power, VAD_ABSOLUTE_POWER_FLOOR))
    peak = log_energy[audible].max()
    return audible & (log_energy > peak - threshold_db_below_peak)


def power_normalize(
    clip: AudioClip,
    target_level_dbfs: float = DEFAULT_TARGET_DBFS,
    frame_shift_ms: float = DEFAULT_VAD_SHIFT_MS,
    threshold_db_below_peak: float = DEFAULT_VAD_THRESHOLD_DB,
) -> PowerNormResult:
    """Scale so the RMS over speech-active frames hits the target level.

    Raises SilentAudioError when no frame is active. If the required gain
    would push the peak past 0.99 it is reduced and `clip_limited` is set.
    """
    mask = energy_vad(clip, frame_shift_ms, threshold_db_below_peak)
    if not np.any(mask):
        raise SilentAudioError("no speech-active frames; recording is unusable")

    hop = max(1, int(round(clip.sample_rate * frame_shift_ms / 1000.0)))
    n_frames = len(mask)
    framed = clip.samples[: n_frames * hop].reshape(n_frames, hop)
    active_rms = math.sqrt(float(np.mean(framed[mask] ** 2)))
    current_dbfs = 20.0 * math.log10(active_rms)
    gain = 10.0 ** ((target_level_dbfs - current_dbfs) / 20.0)

    peak = float(np.max(np.abs(clip.samples)))
    clip_limited = False
    if peak * gain > CLIP_GUARD_PEAK:
        gain = CLIP_GUARD_PEAK / peak
        clip_limited = True

    out = AudioClip(samples=clip.samples * gain, sample_rate=clip.sample_rate)
    return PowerNormResult(clip=out, gain=gain, clip_limited=clip_limited)


def active_rms_dbfs(
    clip: AudioClip,
    frame_shift_ms: float = DEFAULT_VAD_SHIFT_MS,
    threshold_db_below_peak: float = DEFAULT_VAD_THRESHOLD_DB,
) -> float:
    """RMS level in dBFS measured over speech-active frames only."""
    mask = energy_vad(clip, frame_shift_ms, threshold_db_below_peak)
    if not np.any(mask):
        raise SilentAudioError("no speech-active frames")
    hop = max(1, int(round(clip.sample_rate * frame_shift_ms / 1000.0)))
    framed = clip.samples[: len(mask) * hop].reshape(len(mask), hop)
    return 20.0 * math.log10(math.sqrt(float(np.mean(framed[mask] ** 2))))
