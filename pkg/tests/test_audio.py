from __future__ import annotations

import math
import struct

import numpy as np
import pytest

from voxkit.audio import (
    AudioClip,
    active_rms_dbfs,
    energy_vad,
    load_wav,
    power_normalize,
    resample,
    save_wav,
)
from voxkit.errors import AudioFormatError, SilentAudioError, TruncatedAudioError

from conftest import sine_clip


def _write_pcm16(path, samples, rate=16000, channels=1):
    pcm = np.round(np.asarray(samples) * 32767.0).astype("<i2")
    payload = pcm.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 1, channels, rate, rate * 2 * channels, 2 * channels, 16,
        b"data", len(payload),
    )
    path.write_bytes(header + payload)


class TestLoadWav:
    def test_mono_16bit_duration(self, tmp_path):
        path = tmp_path / "a.wav"
        _write_pcm16(path, np.zeros(16000), rate=16000)
        clip = load_wav(path)
        assert clip.duration_seconds == pytest.approx(1.0)
        assert clip.sample_rate == 16000
        assert clip.channel_count == 1

    def test_stereo_opposite_channels_average_to_zero(self, tmp_path):
        path = tmp_path / "st.wav"
        frames = np.empty(2000)
        frames[0::2] = 0.5
        frames[1::2] = -0.5
        _write_pcm16(path, frames, rate=8000, channels=2)
        clip = load_wav(path)
        assert len(clip.samples) == 1000
        assert np.all(np.abs(clip.samples) < 1e-4)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_wav(tmp_path / "nope.wav")

    def test_not_riff(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"OggS" + b"\x00" * 64)
        with pytest.raises(AudioFormatError):
            load_wav(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.wav"
        _write_pcm16(path, np.zeros(1000))
        whole = path.read_bytes()
        path.write_bytes(whole[: len(whole) - 500])
        with pytest.raises(TruncatedAudioError):
            load_wav(path)

    def test_unsupported_bit_depth(self, tmp_path):
        path = tmp_path / "odd.wav"
        payload = b"\x00" * 64
        header = struct.pack(
            "<4sI4s4sIHHIIHH4sI",
            b"RIFF", 36 + len(payload), b"WAVE",
            b"fmt ", 16, 1, 1, 16000, 16000 * 4, 4, 32,
            b"data", len(payload),
        )
        path.write_bytes(header + payload)
        with pytest.raises(AudioFormatError):
            load_wav(path)

    def test_float32_roundtrip(self, tmp_path):
        path = tmp_path / "f32.wav"
        samples = np.linspace(-0.9, 0.9, 500, dtype="<f4")
        payload = samples.tobytes()
        header = struct.pack(
            "<4sI4s4sIHHIIHH4sI",
            b"RIFF", 36 + len(payload), b"WAVE",
            b"fmt ", 16, 3, 1, 16000, 16000 * 4, 4, 32,
            b"data", len(payload),
        )
        path.write_bytes(header + payload)
        clip = load_wav(path)
        assert np.allclose(clip.samples, samples, atol=1e-7)

    def test_24bit(self, tmp_path):
        path = tmp_path / "p24.wav"
        values = np.array([0, 1 << 22, -(1 << 22), (1 << 23) - 1], dtype=np.int64)
        raw = bytearray()
        for v in values:
            raw += int(v & 0xFFFFFF).to_bytes(3, "little")
        header = struct.pack(
            "<4sI4s4sIHHIIHH4sI",
            b"RIFF", 36 + len(raw), b"WAVE",
            b"fmt ", 16, 1, 1, 16000, 16000 * 3, 3, 24,
            b"data", len(raw),
        )
        path.write_bytes(header + bytes(raw))
        clip = load_wav(path)
        assert clip.samples == pytest.approx([0.0, 0.5, -0.5, 1.0 - 2**-23], abs=1e-9)

    def test_save_load_roundtrip(self, tmp_path):
        clip = sine_clip(freq_hz=300, duration_s=0.2, amplitude=0.7)
        path = tmp_path / "rt.wav"
        save_wav(clip, path)
        back = load_wav(path)
        assert back.sample_rate == clip.sample_rate
        assert np.allclose(back.samples, clip.samples, atol=1.0 / 32000)


class TestResample:
    def test_same_rate_is_identity(self):
        clip = sine_clip(duration_s=0.1)
        assert resample(clip, clip.sample_rate) is clip

    def test_duration_preserved(self):
        clip = sine_clip(duration_s=1.0, rate=16000)
        out = resample(clip, 8000)
        assert abs(len(out.samples) - 8000) <= 1

    def test_sine_survives_downsampling(self):
        # Oracle: an analytically generated 100 Hz sine at the target rate.
        clip = sine_clip(freq_hz=100.0, duration_s=1.0, rate=16000, amplitude=0.8)
        out = resample(clip, 8000)
        t = np.arange(len(out.samples)) / 8000.0
        reference = 0.8 * np.sin(2 * np.pi * 100.0 * t)
        corr = np.corrcoef(out.samples, reference)[0, 1]
        assert corr > 0.99

    def test_upsample_duration(self):
        clip = sine_clip(duration_s=0.5, rate=8000)
        out = resample(clip, 22050)
        assert abs(len(out.samples) - int(0.5 * 22050)) <= 1


class TestEnergyVad:
    def test_constant_tone_all_active(self):
        mask = energy_vad(sine_clip(duration_s=0.3))
        assert mask.all()

    def test_tone_then_silence(self):
        rate = 16000
        tone = sine_clip(duration_s=0.5, rate=rate).samples
        clip = AudioClip(samples=np.concatenate([tone, np.zeros(rate // 2)]), sample_rate=rate)
        mask = energy_vad(clip, frame_shift_ms=10.0)
        half = len(mask) // 2
        assert mask[: half - 1].all()
        assert not mask[half + 1 :].any()

    def test_all_zero_inactive(self):
        clip = AudioClip(samples=np.zeros(8000), sample_rate=16000)
        assert not energy_vad(clip).any()


class TestPowerNormalize:
    def test_full_scale_sine_gain(self):
        # Hand-derived: sine RMS is -3.0103 dBFS, so the gain to -26 dBFS
        # is 10 ** ((-26 + 3.0103) / 20) = 0.070865.
        result = power_normalize(sine_clip(duration_s=0.5), target_level_dbfs=-26.0)
        assert result.gain == pytest.approx(0.070865, abs=5e-4)
        assert not result.clip_limited

    def test_hits_target_within_tenth_db(self):
        rng = np.random.default_rng(7)
        clip = AudioClip(samples=0.3 * rng.standard_normal(16000).clip(-1, 1), sample_rate=16000)
        result = power_normalize(clip, target_level_dbfs=-26.0)
        assert abs(active_rms_dbfs(result.clip) + 26.0) < 0.1

    def test_already_at_target(self):
        base = power_normalize(sine_clip(duration_s=0.5), target_level_dbfs=-26.0).clip
        again = power_normalize(base, target_level_dbfs=-26.0)
        assert again.gain == pytest.approx(1.0, rel=0.01)

    def test_clip_limited_flag(self):
        clip = sine_clip(duration_s=0.2, amplitude=0.5)
        result = power_normalize(clip, target_level_dbfs=0.0)
        assert result.clip_limited
        assert np.max(np.abs(result.clip.samples)) == pytest.approx(0.99, abs=1e-6)

    def test_all_silent_raises(self):
        clip = AudioClip(samples=np.zeros(8000), sample_rate=16000)
        with pytest.raises(SilentAudioError):
            power_normalize(clip)
