"""Corpus manifests: catalog model, validation, statistics, audio cutting,
and duration-based split generation.

Manifest format (UTF-8): header lines `#key: value` for language, source,
and license, then one record per line:

    id<TAB>audio_path<TAB>start_s<TAB>end_s<TAB>speaker<TAB>text[<TAB>score]

start = end = 0 means the record covers the whole audio file.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import AudioClip, load_wav, power_normalize, save_wav
from .errors import ManifestError

_ID_SAFE = re.compile(r"^[A-Za-z0-9._-]+$")
_DIGITS = re.compile(r"[0-9]")

DURATION_SUM_TOLERANCE_S = 0.1


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    text: str
    audio_path: str
    start: float = 0.0
    end: float = 0.0
    speaker: str = "unknown"
    score: float | None = None


@dataclass(frozen=True)
class Manifest:
    language: str
    source: str
    license: str
    utterances: tuple[Utterance, ...]
    root: Path | None = None

    def resolve(self, utterance: Utterance) -> Path:
        path = Path(utterance.audio_path)
        if path.is_absolute() or self.root is None:
            return path
        return self.root / path


@functools.lru_cache(maxsize=8)
def _cached_wav(path: str) -> AudioClip:
    return load_wav(path)


def utterance_duration(manifest: Manifest, utterance: Utterance) -> float:
    if utterance.end > utterance.start:
        return utterance.end - utterance.start
    return _cached_wav(str(manifest.resolve(utterance))).duration_seconds


def utterance_clip(manifest: Manifest, utterance: Utterance) -> AudioClip:
    """Audio region of one utterance as a clip."""
    clip = _cached_wav(str(manifest.resolve(utterance)))
    if utterance.end <= utterance.start:
        return clip
    lo = int(round(utterance.start * clip.sample_rate))
    hi = int(round(utterance.end * clip.sample_rate))
    return AudioClip(samples=clip.samples[lo:hi], sample_rate=clip.sample_rate)


def total_duration(manifest: Manifest) -> float:
    return sum(utterance_duration(manifest, u) for u in manifest.utterances)


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ManifestError(f"cannot read manifest: {err}") from err

    headers = {"language": "", "source": "", "license": ""}
    utterances = []
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                headers[key.strip()] = value.strip()
            continue
        fields = line.split("\t")
        if len(fields) not in (6, 7):
            raise ManifestError(f"{path}:{line_no}: expected 6 or 7 tab-separated fields")
        try:
            utterances.append(
                Utterance(
                    utterance_id=fields[0],
                    audio_path=fields[1],
                    start=float(fields[2]),
                    end=float(fields[3]),
                    speaker=fields[4],
                    text=fields[5],
                    score=float(fields[6]) if len(fields) == 7 else None,
                )
            )
        except ValueError as err:
            raise ManifestError(f"{path}:{line_no}: {err}") from err

    return Manifest(
        language=headers["language"],
        source=headers["source"],
        license=headers["license"],
        utterances=tuple(utterances),
        root=path.parent,
    )


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    lines = [
        f"#language: {manifest.language}",
        f"#source: {manifest.source}",
        f"#license: {manifest.license}",
    ]
    for u in manifest.utterances:
        record = (
            f"{u.utterance_id}\t{u.audio_path}\t{u.start:.6f}\t{u.end:.6f}"
            f"\t{u.speaker}\t{u.text}"
        )
        if u.score is not None:
            record += f"\t{u.score:.6f}"
        lines.append(record)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Violation:
    kind: str
    location: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(manifest: Manifest) -> ValidationReport:
    """Check id uniqueness, audio existence, durations, digit-free text,
    and license presence. Findings are report content, not exceptions."""
    violations = []
    if not manifest.license:
        violations.append(Violation("license", "header", "license tag is empty"))
    seen: set[str] = set()
    for u in manifest.utterances:
        where = u.utterance_id
        if u.utterance_id in seen:
            violations.append(Violation("duplicate-id", where, f"id {u.utterance_id!r} repeats"))
        seen.add(u.utterance_id)
        if not _ID_SAFE.match(u.utterance_id):
            violations.append(Violation("unsafe-id", where, "id is not filesystem-safe"))
        if not u.text.strip():
            violations.append(Violation("empty-text", where, "text is empty"))
        if _DIGITS.search(u.text):
            violations.append(
                Violation("digits-in-text", where, "text contains digits (not normalized)")
            )
        if not manifest.resolve(u).exists():
            violations.append(Violation("missing-audio", where, f"{u.audio_path} not found"))
        elif u.end > 0 or u.start > 0:
            if u.end <= u.start:
                violations.append(Violation("bad-times", where, "end must exceed start"))
    return ValidationReport(violations=tuple(violations))


@dataclass(frozen=True)
class CorpusStats:
    utterance_count: int
    total_hours: float
    mean_utterance_seconds: float | None


def stats(manifest: Manifest) -> CorpusStats:
    seconds = total_duration(manifest)
    count = len(manifest.utterances)
    return CorpusStats(
        utterance_count=count,
        total_hours=seconds / 3600.0,
        mean_utterance_seconds=seconds / count if count else None,
    )


def format_stats(s: CorpusStats) -> str:
    mean = "n/a" if s.mean_utterance_seconds is None else f"{s.mean_utterance_seconds:.2f}"
    return (
        f"utterances: {s.utterance_count}\n"
        f"hours: {s.total_hours:.2f}\n"
        f"mean utterance seconds: {mean}"
    )


@dataclass(frozen=True)
class SplitSpec:
    """Targets in minutes, strictly increasing; nested splits share a prefix
    under the chosen order ("corpus" or "random" with a seed)."""

    target_minutes: tuple[float, ...]
    nested: bool = True
    order: str = "corpus"
    seed: int = 0

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.target_minutes, self.target_minutes[1:])):
            raise ValueError("targets must be strictly increasing")
        if self.order not in ("corpus", "random"):
            raise ValueError("order must be 'corpus' or 'random'")


def make_splits(manifest: Manifest, spec: SplitSpec) -> list[Manifest]:
    """Duration-targeted sub-corpora; each is the smallest prefix (under the
    chosen order) whose duration reaches its target."""
    durations = [utterance_duration(manifest, u) for u in manifest.utterances]
    total = sum(durations)
    for minutes in spec.target_minutes:
        if minutes * 60.0 > total + 1e-9:
            raise ValueError(f"target {minutes} min exceeds corpus duration")

    order = list(range(len(manifest.utterances)))
    if spec.order == "random":
        rng = np.random.default_rng(spec.seed)
        rng.shuffle(order)

    splits = []
    for minutes in spec.target_minutes:
        target_s = minutes * 60.0
        chosen: list[int] = []
        acc = 0.0
        for index in order:
            if acc >= target_s:
                break
            chosen.append(index)
            acc += durations[index]
        if not spec.nested:
            rng = np.random.default_rng(spec.seed + int(minutes))
            rng.shuffle(order)
        keep = sorted(chosen)
        splits.append(
            replace(manifest, utterances=tuple(manifest.utterances[i] for i in keep))
        )
    return splits


def save_segments(segments: dict[str, list[tuple[str, int, int]]], path: str | Path) -> None:
    """Per-utterance phone spans: `utt_id<TAB>phone<TAB>start_frame<TAB>end_frame`."""
    lines = []
    for utt_id, spans in segments.items():
        for phone, start, end in spans:
            lines.append(f"{utt_id}\t{phone}\t{start}\t{end}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_segments(path: str | Path) -> dict[str, list[tuple[str, int, int]]]:
    segments: dict[str, list[tuple[str, int, int]]] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip() or raw.startswith("#"):
            continue
        utt_id, phone, start, end = raw.split("\t")
        segments.setdefault(utt_id, []).append((phone, int(start), int(end)))
    return segments


@dataclass(frozen=True)
class CutResult:
    manifest: Manifest
    segments: dict[str, list[tuple[str, int, int]]]


def cut_audio(
    alignment,
    clip: AudioClip,
    out_dir: str | Path,
    language: str = "",
    source: str = "",
    license_tag: str = "",
    speaker: str = "unknown",
    normalize: bool = True,
) -> CutResult:
    """Write one WAV per aligned utterance and return the new manifest.

    Utterance phone segmentations are re-based to the cut files so a voice
    can be built from them. With `normalize` each cut is power-normalized;
    switch it off to keep samples bit-comparable with the source region.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rate = clip.sample_rate
    frame_shift_s = alignment.frame_shift_ms / 1000.0

    utterances = []
    segments: dict[str, list[tuple[str, int, int]]] = {}
    for utt in alignment.utterances:
        lo = int(round(utt.start_time * rate))
        hi = int(round(utt.end_time * rate))
        if lo < 0 or hi > len(clip.samples) or hi <= lo:
            raise ValueError(
                f"utterance {utt.verse_id}: [{utt.start_time}, {utt.end_time}] "
                "outside the audio"
            )
        piece = AudioClip(samples=clip.samples[lo:hi], sample_rate=rate)
        if normalize:
            piece = power_normalize(piece).clip
        filename = f"{utt.verse_id}.wav"
        save_wav(piece, out_dir / filename)
        duration = len(piece.samples) / rate
        utterances.append(
            Utterance(
                utterance_id=utt.verse_id,
                text=utt.text,
                audio_path=filename,
                start=0.0,
                end=duration,
                speaker=speaker,
                score=utt.score,
            )
        )
        base_frame = int(round(utt.start_time / frame_shift_s))
        segments[utt.verse_id] = [
            (phone, start - base_frame, end - base_frame)
            for phone, start, end in utt.segments
        ]

    manifest = Manifest(
        language=language,
        source=source,
        license=license_tag,
        utterances=tuple(utterances),
        root=out_dir,
    )
    return CutResult(manifest=manifest, segments=segments)
