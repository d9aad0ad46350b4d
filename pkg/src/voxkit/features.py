"""MFCC extraction: framing, mel filterbank, and DCT over log energies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fftpack import dct
from scipy.signal import get_window

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class MfccConfig:
    """Feature extraction settings. `num_coefficients` counts cepstral
    coefficients beyond c0; with `include_c0` the frame dim is one larger."""

    num_coefficients: int = 24
    num_mel_filters: int = 26
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    pre_emphasis: float = 0.97
    window: str = "hann"
    include_c0: bool = True
    low_freq_hz: float = 0.0
    high_freq_hz: float | None = None

    def __post_init__(self):
        if self.num_coefficients > self.num_mel_filters:
            raise ValueError("num_coefficients must not exceed num_mel_filters")
        if self.frame_shift_ms > self.frame_length_ms:
            raise ValueError("frame_shift_ms must not exceed frame_length_ms")

    def frame_length_samples(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.frame_length_ms / 1000.0))

    def frame_shift_samples(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.frame_shift_ms / 1000.0))


@dataclass(frozen=True, eq=False)
class FeatureTrack:
    """Frame matrix (frame_count x dim) plus the framing that produced it."""

    frames: np.ndarray
    frame_shift_ms: float
    frame_length_ms: float
    includes_c0: bool

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ValueError("frames must be a 2-D matrix")
        if frames.size and not np.all(np.isfinite(frames)):
            raise ValueError("frame values must be finite")
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    num_filters: int, nfft: int, sample_rate: int, low_hz: float, high_hz: float
) -> np.ndarray:
    """Triangular filters over rfft bins, rows summing over a mel band."""
    points = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), num_filters + 2))
    bins = np.floor((nfft + 1) * points / sample_rate).astype(int)
    bank = np.zeros((num_filters, nfft // 2 + 1))
    for j in range(num_filters):
        left, center, right = bins[j], bins[j + 1], bins[j + 2]
        for i in range(left, center):
            bank[j, i] = (i - left) / max(1, center - left)
        for i in range(center, right):
            bank[j, i] = (right - i) / max(1, right - center)
    return bank


def mfcc(clip, config: MfccConfig = MfccConfig()) -> FeatureTrack:
    """Extract mel-frequency cepstral coefficients from a clip.

    Only complete frames are produced: frame_count is
    floor((n_samples - frame_length) / frame_shift) + 1.
    """
    rate = clip.sample_rate
    frame_len = config.frame_length_samples(rate)
    hop = config.frame_shift_samples(rate)
    signal = np.asarray(clip.samples, dtype=np.float64)
    if len(signal) < frame_len:
        raise ValueError(
            f"clip of {len(signal)} samples is shorter than one "
            f"{frame_len}-sample frame"
        )

    if config.pre_emphasis > 0.0:
        signal = np.concatenate(
            ([signal[0]], signal[1:] - config.pre_emphasis * signal[:-1])
        )

    n_frames = (len(signal) - frame_len) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(signal, frame_len)[::hop][
        :n_frames
    ]
    frames = frames * get_window(config.window, frame_len, fftbins=True)

    nfft = 1
    while nfft < frame_len:
        nfft *= 2
    power = np.abs(np.fft.rfft(frames, nfft)) ** 2 / nfft

    high_hz = config.high_freq_hz if config.high_freq_hz is not None else rate / 2.0
    bank = mel_filterbank(config.num_mel_filters, nfft, rate, config.low_freq_hz, high_hz)
    log_mel = np.log(np.maximum(power @ bank.T, LOG_FLOOR))

    cepstra = dct(log_mel, type=2, axis=1, norm="ortho")
    first = 0 if config.include_c0 else 1
    coeffs = cepstra[:, first : config.num_coefficients + 1]

    return FeatureTrack(
        frames=coeffs,
        frame_shift_ms=config.frame_shift_ms,
        frame_length_ms=config.frame_length_ms,
        includes_c0=config.include_c0,
    )
