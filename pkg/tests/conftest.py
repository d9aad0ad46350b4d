from __future__ import annotations

import numpy as np
import pytest

from voxkit.audio import AudioClip
from voxkit.textnorm import G2pTable, NumberDictionary


def sine_clip(freq_hz=440.0, duration_s=1.0, rate=16000, amplitude=1.0):
    t = np.arange(int(round(duration_s * rate))) / rate
    return AudioClip(samples=amplitude * np.sin(2 * np.pi * freq_hz * t), sample_rate=rate)


@pytest.fixture
def identity_table():
    return G2pTable(language="test", rules=())


@pytest.fixture
def demo_numbers():
    return NumberDictionary(
        language="test",
        atoms={
            0: "ziro", 1: "moja", 2: "bili", 3: "tatu", 4: "nne", 5: "tano",
            6: "sita", 7: "saba", 8: "nane", 9: "tisa", 10: "kumi",
            20: "ishirini", 30: "thelathini", 40: "arbaini", 50: "hamsini",
            60: "sitini", 70: "sabini", 80: "themanini", 90: "tisini",
            100: "mia", 1000: "elfu",
        },
    )
