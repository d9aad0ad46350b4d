"""Deterministic synthetic chapters with known ground truth.

Each letter-phone is rendered as a fixed harmonic tone signature, so the
aligner's recovered boundaries can be scored against the generator's
record of where every verse starts and ends. Used by the test suite and
the end-to-end pipeline demo; real data enters through the CLI instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioClip, save_wav
from .textnorm import G2pTable, NumberDictionary, normalize_numbers

ALPHABET = "abdegiklmnorstuw"
_HARMONIC_AMPS = (1.0, 0.45, 0.2)
_RAMP_MS = 2.0


@dataclass(frozen=True)
class SyntheticChapter:
    clip: AudioClip
    raw_verses: tuple[tuple[str, str], ...]
    verses: tuple[tuple[str, str], ...]
    verse_bounds: tuple[tuple[int, int], ...]  # ground truth, in samples
    table: G2pTable
    numbers: NumberDictionary
    sample_rate: int

    def verse_bound_frames(self, frame_shift_samples: int) -> list[tuple[int, int]]:
        return [
            (round(a / frame_shift_samples), round(b / frame_shift_samples))
            for a, b in self.verse_bounds
        ]


def phone_wave(phone: str, n_samples: int, rate: int) -> np.ndarray:
    """Stationary harmonic tone unique to the phone, with short on/off
    ramps to avoid concatenation clicks."""
    index = ALPHABET.index(phone) if phone in ALPHABET else len(ALPHABET)
    f0 = 120.0 + 37.0 * index
    t = np.arange(n_samples) / rate
    wave = np.zeros(n_samples)
    for harmonic, amp in enumerate(_HARMONIC_AMPS, start=1):
        wave += amp * np.sin(2 * np.pi * f0 * harmonic * t)
    if n_samples:
        wave *= 0.35 / max(float(np.max(np.abs(wave))), 1e-9)
    ramp = min(int(rate * _RAMP_MS / 1000.0), n_samples // 2)
    if ramp:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        wave[:ramp] *= fade
        wave[-ramp:] *= fade[::-1]
    return wave


def demo_number_dictionary() -> NumberDictionary:
    """Small dictionary whose words stay inside the generator alphabet."""
    return NumberDictionary(
        language="demo",
        atoms={
            0: "ziro", 1: "moja", 2: "bili", 3: "tatu", 4: "nne", 5: "tano",
            6: "sita", 7: "saba", 8: "nane", 9: "tisa", 10: "kumi",
            20: "makumi", 30: "melatu", 40: "manne", 50: "matano",
            100: "mia", 1000: "elu",
        },
    )


def synthetic_chapter(
    seed: int = 0,
    n_verses: int = 6,
    rate: int = 16000,
    words_per_verse: tuple[int, int] = (2, 4),
    letters_per_word: tuple[int, int] = (2, 5),
    phone_ms: tuple[float, float] = (90.0, 200.0),
    pause_ms: tuple[float, float] = (150.0, 400.0),
    snr_db: float | None = None,
    include_numbers: bool = False,
) -> SyntheticChapter:
    """Build one chapter: verses of random letter-words rendered as tones,
    separated by silence, with ground-truth verse boundaries recorded."""
    rng = np.random.default_rng(seed)
    table = G2pTable(language="demo", rules=())
    numbers = demo_number_dictionary()

    raw_verses = []
    verses = []
    pieces: list[np.ndarray] = []
    bounds = []
    cursor = 0

    def add_silence(ms: float):
        nonlocal cursor
        n = int(rate * ms / 1000.0)
        pieces.append(np.zeros(n))
        cursor += n

    add_silence(rng.uniform(*pause_ms))
    for v in range(n_verses):
        words = []
        for _ in range(int(rng.integers(words_per_verse[0], words_per_verse[1] + 1))):
            length = int(rng.integers(letters_per_word[0], letters_per_word[1] + 1))
            words.append("".join(rng.choice(list(ALPHABET), size=length)))
        raw_text = " ".join(words)
        if include_numbers and v % 3 == 1:
            raw_text += f" {int(rng.integers(1, 50))}"
        normalized = normalize_numbers(raw_text, numbers)

        verse_start = cursor
        for w, word in enumerate(normalized.split()):
            for letter in word:
                n = int(rate * rng.uniform(*phone_ms) / 1000.0)
                pieces.append(phone_wave(letter, n, rate))
                cursor += n
        bounds.append((verse_start, cursor))
        verse_id = f"v{v + 1:03d}"
        raw_verses.append((verse_id, raw_text))
        verses.append((verse_id, normalized))
        add_silence(rng.uniform(*pause_ms))

    samples = np.concatenate(pieces)
    if snr_db is not None:
        speech_power = float(np.mean(samples[np.abs(samples) > 1e-6] ** 2))
        noise_power = speech_power / (10.0 ** (snr_db / 10.0))
        samples = samples + rng.normal(0.0, np.sqrt(noise_power), len(samples))
    samples = np.clip(samples, -1.0, 1.0)

    return SyntheticChapter(
        clip=AudioClip(samples=samples, sample_rate=rate),
        raw_verses=tuple(raw_verses),
        verses=tuple(verses),
        verse_bounds=tuple(bounds),
        table=table,
        numbers=numbers,
        sample_rate=rate,
    )


def write_chapter_fixture(chapter: SyntheticChapter, out_dir: str | Path) -> dict[str, Path]:
    """Materialize a chapter as the files the CLI pipeline consumes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "audio": out_dir / "chapter.wav",
        "verses": out_dir / "verses.tsv",
        "g2p": out_dir / "g2p.tsv",
        "numbers": out_dir / "numbers.tsv",
    }
    save_wav(chapter.clip, paths["audio"])
    paths["verses"].write_text(
        "".join(f"{vid}\t{text}\n" for vid, text in chapter.raw_verses),
        encoding="utf-8",
    )
    # Identity letter rules, written out so the files stand alone.
    paths["g2p"].write_text(
        "".join(f"{c}\t{c}\n" for c in ALPHABET), encoding="utf-8"
    )
    from .textnorm import save_number_dictionary

    save_number_dictionary(chapter.numbers, paths["numbers"])
    return paths
