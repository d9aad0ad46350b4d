"""Objective and subjective scoring: mel cepstral distortion, character
error rate, and preference-test tallying."""

from __future__ import annotations

import math
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .audio import load_wav
from .dtw import dtw as dtw_align
from .features import FeatureTrack, MfccConfig, mfcc

MCD_SCALE = 10.0 / math.log(10.0)
# Differences at or above this many dB are audible to listeners.
MCD_SIGNIFICANCE_DB = 0.12

_PUNCT_STRIP = re.compile(r"[^\w\s]|_", re.UNICODE)
_VOWEL_RUN = re.compile(r"([aeiou])\1+")


@dataclass(frozen=True)
class UtteranceMcd:
    utterance_id: str | None
    mcd: float
    frame_pairs: int


@dataclass(frozen=True)
class McdResult:
    mean_mcd: float
    frame_pair_count: int
    per_utterance: tuple[UtteranceMcd, ...]
    used_dtw: bool
    missing_reference: tuple[str, ...] = ()
    missing_hypothesis: tuple[str, ...] = ()


def _frame_mcd(delta: np.ndarray) -> float:
    return MCD_SCALE * math.sqrt(2.0 * float(np.dot(delta, delta)))


def mcd(a: FeatureTrack, b: FeatureTrack, align: bool = True) -> McdResult:
    """Mean mel cepstral distortion in dB between two feature tracks.

    c0 is excluded from the distance when present. With `align` the frame
    pairing comes from DTW; otherwise frames pair index-wise over the
    shorter track.
    """
    if a.frame_count == 0 or b.frame_count == 0:
        raise ValueError("cannot score an empty track")
    if a.dim != b.dim or a.includes_c0 != b.includes_c0:
        raise ValueError("tracks must share dimension and c0 convention")

    first = 1 if a.includes_c0 else 0
    xa = a.frames[:, first:]
    xb = b.frames[:, first:]

    if align:
        pairs = dtw_align(a, b).pairs
    else:
        pairs = [(i, i) for i in range(min(a.frame_count, b.frame_count))]

    values = [_frame_mcd(xa[i] - xb[j]) for i, j in pairs]
    mean = float(np.mean(values))
    return McdResult(
        mean_mcd=mean,
        frame_pair_count=len(values),
        per_utterance=(UtteranceMcd(None, mean, len(values)),),
        used_dtw=align,
    )


def mcd_testset(
    reference,
    hypothesis,
    config: MfccConfig = MfccConfig(),
    align: bool = True,
) -> McdResult:
    """Frame-weighted mean MCD between matching utterances of two manifests.

    Utterance ids present on only one side are reported, not fatal; zero
    overlap is an error.
    """
    ref_utts = {u.utterance_id: u for u in reference.utterances}
    hyp_utts = {u.utterance_id: u for u in hypothesis.utterances}
    shared = [uid for uid in ref_utts if uid in hyp_utts]
    if not shared:
        raise ValueError("no utterance ids in common between the manifests")

    per = []
    total = 0.0
    pair_total = 0
    for uid in shared:
        track_r = mfcc(corpus_mod.utterance_clip(reference, ref_utts[uid]), config)
        track_h = mfcc(corpus_mod.utterance_clip(hypothesis, hyp_utts[uid]), config)
        result = mcd(track_r, track_h, align=align)
        per.append(UtteranceMcd(uid, result.mean_mcd, result.frame_pair_count))
        total += result.mean_mcd * result.frame_pair_count
        pair_total += result.frame_pair_count

    return McdResult(
        mean_mcd=total / pair_total,
        frame_pair_count=pair_total,
        per_utterance=tuple(per),
        used_dtw=align,
        missing_reference=tuple(sorted(set(hyp_utts) - set(ref_utts))),
        missing_hypothesis=tuple(sorted(set(ref_utts) - set(hyp_utts))),
    )


def significant_difference(mcd_a: float, mcd_b: float) -> bool:
    """True when the MCD gap is large enough to be heard.

    The tiny slack absorbs float representation error so a difference
    intended to be exactly the threshold still fires."""
    return abs(mcd_a - mcd_b) >= MCD_SIGNIFICANCE_DB - 1e-12


@dataclass(frozen=True)
class CerProfile:
    """Text conditioning applied to both sides before edit distance."""

    lowercase: bool = True
    collapse_whitespace: bool = True
    strip_punctuation: bool = True
    # Lenient extras for unstandardized orthography: ignore word joins,
    # doubled vowels, and the w/u distinction.
    remove_spaces: bool = False
    collapse_double_vowels: bool = False
    merge_w_u: bool = False

    def apply(self, text: str) -> str:
        out = unicodedata.normalize("NFC", text)
        if self.lowercase:
            out = out.lower()
        if self.strip_punctuation:
            out = _PUNCT_STRIP.sub("", out)
        if self.collapse_whitespace:
            out = " ".join(out.split())
        if self.remove_spaces:
            out = out.replace(" ", "")
        if self.merge_w_u:
            out = out.replace("w", "u")
        if self.collapse_double_vowels:
            out = _VOWEL_RUN.sub(r"\1", out)
        return out


STRICT_PROFILE = CerProfile()
LENIENT_PROFILE = CerProfile(
    remove_spaces=True, collapse_double_vowels=True, merge_w_u=True
)


@dataclass(frozen=True)
class CerResult:
    distance: int
    reference_length: int
    cer: float

    @property
    def percent(self) -> float:
        return 100.0 * self.cer


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance over Unicode characters."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        current = [i]
        for j, cb in enumerate(b, 1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def cer(reference: str, hypothesis: str, profile: CerProfile = STRICT_PROFILE) -> CerResult:
    """Character error rate after profile conditioning.

    Raises ValueError when the reference is empty after conditioning.
    """
    ref = profile.apply(reference)
    hyp = profile.apply(hypothesis)
    if not ref:
        raise ValueError("reference is empty after normalization")
    distance = edit_distance(ref, hyp)
    return CerResult(distance=distance, reference_length=len(ref), cer=distance / len(ref))


@dataclass(frozen=True)
class PreferenceVote:
    """One de-randomizable answer: which system was playing as A/B, and
    what the evaluator picked."""

    evaluator: str
    system_a: str
    system_b: str
    choice: str  # "A" | "B" | "same"


@dataclass(frozen=True)
class PreferenceTally:
    system_counts: dict[str, int]
    same_count: int
    per_evaluator: dict[str, dict[str, int]]
    winner: str | None

    @property
    def response_count(self) -> int:
        return sum(self.system_counts.values()) + self.same_count


def tally_preferences(votes) -> PreferenceTally:
    """De-randomize presentation order and count picks per system.

    The winner is the system with the most picks; equal top counts are a
    tie (winner None).
    """
    system_counts: dict[str, int] = {}
    per_evaluator: dict[str, dict[str, int]] = {}
    same_count = 0
    for vote in votes:
        if vote.choice not in ("A", "B", "same"):
            raise ValueError(f"choice {vote.choice!r} not in A/B/same")
        if vote.system_a == vote.system_b:
            raise ValueError("preference item must present two distinct systems")
        row = per_evaluator.setdefault(vote.evaluator, {})
        if vote.choice == "same":
            same_count += 1
            row["same"] = row.get("same", 0) + 1
            for system in (vote.system_a, vote.system_b):
                system_counts.setdefault(system, 0)
                row.setdefault(system, 0)
            continue
        system = vote.system_a if vote.choice == "A" else vote.system_b
        system_counts[system] = system_counts.get(system, 0) + 1
        row[system] = row.get(system, 0) + 1
        other = vote.system_b if vote.choice == "A" else vote.system_a
        system_counts.setdefault(other, 0)
        row.setdefault(other, 0)
        row.setdefault("same", 0)

    winner = None
    if system_counts:
        ranked = sorted(system_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if len(ranked) == 1 or ranked[0][1] > ranked[1][1]:
            winner = ranked[0][0]
    return PreferenceTally(
        system_counts=system_counts,
        same_count=same_count,
        per_evaluator=per_evaluator,
        winner=winner,
    )
