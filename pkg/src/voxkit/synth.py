"""Minimal unit-selection concatenative synthesizer over an aligned corpus.

Units are diphones cut at phone midpoints. Selection is exact Viterbi over
per-position candidate lists: join cost is the Euclidean distance between
abutting boundary MFCC vectors, target cost penalizes deviation from the
corpus phone-duration means. Output is unit concatenation with a raised-
cosine cross-fade. This deliberately replaces heavier statistical synthesis
so the evaluation path can run end to end on a desk.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, load_wav, save_wav
from .corpus import Manifest, Utterance
from .errors import SynthesisError
from .features import MfccConfig, mfcc
from .textnorm import WORD_BOUNDARY, G2pTable, g2p

INDEX_FORMAT = "voxkit-unit-index"
INDEX_VERSION = 1
DEFAULT_CROSSFADE_MS = 10.0


@dataclass(frozen=True)
class SynthWeights:
    join: float = 1.0
    target: float = 0.2


@dataclass(frozen=True)
class UnitRecord:
    utterance_id: str
    left_phone: str
    right_phone: str
    start_frame: int
    junction_frame: int
    end_frame: int
    start_sample: int
    junction_sample: int
    end_sample: int
    start_vec: np.ndarray
    junction_vec: np.ndarray
    end_vec: np.ndarray
    # Full extents of the two phones; plan edges stretch to these so the
    # first and last phones of an utterance are rendered whole.
    left_start_sample: int = 0
    right_end_sample: int = 0

    @property
    def diphone(self) -> str:
        return f"{self.left_phone}-{self.right_phone}"


@dataclass
class UnitIndex:
    units: dict[str, list[UnitRecord]]
    by_left: dict[str, list[UnitRecord]]
    by_right: dict[str, list[UnitRecord]]
    phone_mean_frames: dict[str, float]
    audio_paths: dict[str, str]
    sample_rate: int
    frame_shift_samples: int
    mfcc_config: MfccConfig
    _clip_cache: dict[str, AudioClip] = field(default_factory=dict, repr=False)

    def clip_for(self, utterance_id: str) -> AudioClip:
        clip = self._clip_cache.get(utterance_id)
        if clip is None:
            clip = load_wav(self.audio_paths[utterance_id])
            self._clip_cache[utterance_id] = clip
        return clip

    @property
    def unit_count(self) -> int:
        return sum(len(records) for records in self.units.values())


def build_unit_index(
    manifest: Manifest,
    segments: dict[str, list[tuple[str, int, int]]],
    config: MfccConfig = MfccConfig(),
) -> UnitIndex:
    """One unit per adjacent phone pair of every utterance, cut at phone
    midpoints. Raises KeyError-free errors for missing segmentations."""
    units: dict[str, list[UnitRecord]] = {}
    by_left: dict[str, list[UnitRecord]] = {}
    by_right: dict[str, list[UnitRecord]] = {}
    duration_sums: dict[str, list] = {}
    audio_paths: dict[str, str] = {}
    sample_rate = None

    for utterance in manifest.utterances:
        spans = segments.get(utterance.utterance_id)
        if spans is None:
            raise ValueError(f"no segmentation for utterance {utterance.utterance_id!r}")
        path = manifest.resolve(utterance)
        clip = load_wav(path)
        if sample_rate is None:
            sample_rate = clip.sample_rate
        elif clip.sample_rate != sample_rate:
            raise ValueError("all corpus audio must share one sample rate")
        track = mfcc(clip, config)
        hop = config.frame_shift_samples(clip.sample_rate)
        audio_paths[utterance.utterance_id] = str(path)

        def frame_vec(frame):
            return track.frames[max(0, min(frame, track.frame_count - 1))]

        spans = [
            (phone, max(0, start), min(end, track.frame_count))
            for phone, start, end in spans
        ]
        for phone, start, end in spans:
            if end > start:
                entry = duration_sums.setdefault(phone, [0, 0])
                entry[0] += end - start
                entry[1] += 1
        for (p1, s1, e1), (p2, s2, e2) in zip(spans, spans[1:]):
            start_frame = (s1 + e1) // 2
            junction = s2
            end_frame = (s2 + e2) // 2
            if end_frame <= start_frame:
                continue
            record = UnitRecord(
                utterance_id=utterance.utterance_id,
                left_phone=p1,
                right_phone=p2,
                start_frame=start_frame,
                junction_frame=junction,
                end_frame=end_frame,
                start_sample=start_frame * hop,
                junction_sample=junction * hop,
                end_sample=min(end_frame * hop, len(clip.samples)),
                start_vec=frame_vec(start_frame),
                junction_vec=frame_vec(junction),
                end_vec=frame_vec(end_frame - 1),
                left_start_sample=s1 * hop,
                right_end_sample=min(e2 * hop, len(clip.samples)),
            )
            units.setdefault(record.diphone, []).append(record)
            by_left.setdefault(p1, []).append(record)
            by_right.setdefault(p2, []).append(record)

    if sample_rate is None:
        sample_rate = 16000
    for bucket in (units, by_left, by_right):
        for records in bucket.values():
            records.sort(key=lambda r: (r.utterance_id, r.start_sample))
    return UnitIndex(
        units=units,
        by_left=by_left,
        by_right=by_right,
        phone_mean_frames={
            phone: total / n for phone, (total, n) in duration_sums.items()
        },
        audio_paths=audio_paths,
        sample_rate=sample_rate,
        frame_shift_samples=config.frame_shift_samples(sample_rate),
        mfcc_config=config,
    )


@dataclass(frozen=True)
class _Slot:
    """One DP column: a candidate list of (unit, sample range, vectors)."""

    diphone: str
    backoff: bool
    candidates: tuple


@dataclass(frozen=True)
class _Candidate:
    record: UnitRecord
    start_sample: int
    end_sample: int
    start_vec: np.ndarray
    end_vec: np.ndarray
    duration_frames: int
    expected_frames: float
    # Sample extents when this unit lands at a plan edge.
    edge_start_sample: int = 0
    edge_end_sample: int = 0


@dataclass(frozen=True)
class PlanPosition:
    diphone: str
    backoff: bool
    units: tuple[UnitRecord, ...]


@dataclass(frozen=True)
class SynthPlan:
    target: tuple[str, ...]
    positions: tuple[PlanPosition, ...]
    total_cost: float


def join_cost(end_vec: np.ndarray, start_vec: np.ndarray) -> float:
    diff = end_vec - start_vec
    return float(np.sqrt(np.dot(diff, diff)))


def target_cost(duration_frames: int, expected_frames: float) -> float:
    return abs(duration_frames - expected_frames)


def _expected_frames(index: UnitIndex, phone: str) -> float:
    return index.phone_mean_frames.get(phone, 5.0)


def _slots_for_target(index: UnitIndex, diphones) -> tuple[list[_Slot], list[str]]:
    slots: list[_Slot] = []
    missing: list[str] = []
    for left, right in diphones:
        key = f"{left}-{right}"
        full = index.units.get(key, [])
        if full:
            expected = (_expected_frames(index, left) + _expected_frames(index, right)) / 2.0
            candidates = tuple(
                _Candidate(
                    record=r,
                    start_sample=r.start_sample,
                    end_sample=r.end_sample,
                    start_vec=r.start_vec,
                    end_vec=r.end_vec,
                    duration_frames=r.end_frame - r.start_frame,
                    expected_frames=expected,
                    edge_start_sample=r.left_start_sample,
                    edge_end_sample=r.right_end_sample,
                )
                for r in full
            )
            slots.append(_Slot(diphone=key, backoff=False, candidates=candidates))
            continue
        lefts = index.by_left.get(left, [])
        rights = index.by_right.get(right, [])
        if not lefts or not rights:
            missing.append(key)
            continue
        slots.append(
            _Slot(
                diphone=key,
                backoff=True,
                candidates=tuple(
                    _Candidate(
                        record=r,
                        start_sample=r.start_sample,
                        end_sample=r.junction_sample,
                        start_vec=r.start_vec,
                        end_vec=r.junction_vec,
                        duration_frames=r.junction_frame - r.start_frame,
                        expected_frames=_expected_frames(index, left) / 2.0,
                        edge_start_sample=r.left_start_sample,
                        edge_end_sample=r.junction_sample,
                    )
                    for r in lefts
                    if r.junction_sample > r.start_sample
                ),
            )
        )
        slots.append(
            _Slot(
                diphone=key,
                backoff=True,
                candidates=tuple(
                    _Candidate(
                        record=r,
                        start_sample=r.junction_sample,
                        end_sample=r.end_sample,
                        start_vec=r.junction_vec,
                        end_vec=r.end_vec,
                        duration_frames=r.end_frame - r.junction_frame,
                        expected_frames=_expected_frames(index, right) / 2.0,
                        edge_start_sample=r.junction_sample,
                        edge_end_sample=r.right_end_sample,
                    )
                    for r in rights
                    if r.end_sample > r.junction_sample
                ),
            )
        )
    return slots, missing


def plan_units(index: UnitIndex, diphones, weights: SynthWeights = SynthWeights()):
    """Viterbi over slot candidates; returns (chosen candidates, slots,
    total cost). Ties keep the earliest candidate."""
    slots, missing = _slots_for_target(index, diphones)
    if missing:
        raise SynthesisError(
            f"no units for: {', '.join(missing)}", missing=missing
        )
    for slot in slots:
        if not slot.candidates:
            raise SynthesisError(
                f"no usable units for {slot.diphone}", missing=[slot.diphone]
            )

    previous_costs: list[float] | None = None
    previous_candidates: tuple = ()
    backpointers: list[list[int]] = []
    for slot in slots:
        costs = []
        pointers = []
        for candidate in slot.candidates:
            local = weights.target * target_cost(
                candidate.duration_frames, candidate.expected_frames
            )
            if previous_costs is None:
                costs.append(local)
                pointers.append(-1)
                continue
            best = None
            best_prev = 0
            for prev_index, (prev_cost, prev_candidate) in enumerate(
                zip(previous_costs, previous_candidates)
            ):
                total = prev_cost + weights.join * join_cost(
                    prev_candidate.end_vec, candidate.start_vec
                )
                if best is None or total < best:
                    best = total
                    best_prev = prev_index
            costs.append(best + local)
            pointers.append(best_prev)
        backpointers.append(pointers)
        previous_costs = costs
        previous_candidates = slot.candidates

    final_index = int(np.argmin(previous_costs))
    total_cost = float(previous_costs[final_index])
    chosen: list[_Candidate] = []
    cursor = final_index
    for slot_index in range(len(slots) - 1, -1, -1):
        chosen.append(slots[slot_index].candidates[cursor])
        cursor = backpointers[slot_index][cursor]
    chosen.reverse()
    return chosen, slots, total_cost


def concatenate_units(index: UnitIndex, chosen, crossfade_ms: float):
    """Overlap-add join of the chosen units.

    Pieces are cut with half-fade extensions on their interior edges, so
    units that abut in the source audio blend their own samples and the
    join is transparent. Returns (clip, piece_lengths, overlaps); the
    output length is sum(piece_lengths) - sum(overlaps).
    """
    rate = index.sample_rate
    half = int(round(rate * crossfade_ms / 1000.0)) // 2
    pieces = []
    for k, candidate in enumerate(chosen):
        samples = index.clip_for(candidate.record.utterance_id).samples
        if k > 0:
            left = candidate.start_sample - half
        else:  # render the first phone whole
            left = min(candidate.edge_start_sample, candidate.start_sample)
        if k + 1 < len(chosen):
            right = candidate.end_sample + half
        else:  # and the last
            right = max(candidate.edge_end_sample, candidate.end_sample)
        pieces.append(np.array(samples[max(0, left) : min(len(samples), right)]))

    out = pieces[0]
    piece_lengths = [len(pieces[0])]
    overlaps = []
    for piece in pieces[1:]:
        overlap = min(2 * half, len(out), len(piece))
        piece_lengths.append(len(piece))
        overlaps.append(overlap)
        if overlap:
            ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(overlap) + 0.5) / overlap)
            blended = out[-overlap:] * (1.0 - ramp) + piece[:overlap] * ramp
            out = np.concatenate([out[:-overlap], blended, piece[overlap:]])
        else:
            out = np.concatenate([out, piece])
    clip = AudioClip(samples=np.clip(out, -1.0, 1.0), sample_rate=rate)
    return clip, piece_lengths, overlaps


def synthesize(
    text: str,
    table: G2pTable,
    index: UnitIndex,
    weights: SynthWeights = SynthWeights(),
    crossfade_ms: float = DEFAULT_CROSSFADE_MS,
) -> tuple[AudioClip, SynthPlan]:
    """Render text with the best-cost unit sequence.

    Raises SynthesisError for empty text, too-short phone sequences, and
    unsynthesizable diphones (after half-phone backoff)."""
    phones = [p for p in g2p(text, table) if p != WORD_BOUNDARY]
    if not phones:
        raise SynthesisError("text has no phones")
    if len(phones) < 2:
        raise SynthesisError("need at least two phones to pick diphone units")
    diphones = list(zip(phones, phones[1:]))

    chosen, slots, total_cost = plan_units(index, diphones, weights)

    positions = []
    cursor = 0
    for left, right in diphones:
        key = f"{left}-{right}"
        if slots[cursor].backoff:
            positions.append(
                PlanPosition(
                    diphone=key,
                    backoff=True,
                    units=(chosen[cursor].record, chosen[cursor + 1].record),
                )
            )
            cursor += 2
        else:
            positions.append(
                PlanPosition(diphone=key, backoff=False, units=(chosen[cursor].record,))
            )
            cursor += 1

    clip, _, _ = concatenate_units(index, chosen, crossfade_ms)
    plan = SynthPlan(
        target=tuple(f"{a}-{b}" for a, b in diphones),
        positions=tuple(positions),
        total_cost=total_cost,
    )
    return clip, plan


def batch_synthesize(
    prompts,
    table: G2pTable,
    index: UnitIndex,
    out_dir: str | Path,
    language: str = "",
    source: str = "synthesized",
    license_tag: str = "",
    speaker: str = "synth",
    weights: SynthWeights = SynthWeights(),
    crossfade_ms: float = DEFAULT_CROSSFADE_MS,
):
    """Synthesize each (id, text) prompt; failures are recorded per item
    and the batch continues. Returns (manifest, failures)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    utterances = []
    failures: list[tuple[str, str]] = []
    for prompt_id, text in prompts:
        try:
            clip, _ = synthesize(text, table, index, weights, crossfade_ms)
        except SynthesisError as err:
            failures.append((prompt_id, str(err)))
            continue
        filename = f"{prompt_id}.wav"
        save_wav(clip, out_dir / filename)
        utterances.append(
            Utterance(
                utterance_id=prompt_id,
                text=text,
                audio_path=filename,
                start=0.0,
                end=clip.duration_seconds,
                speaker=speaker,
            )
        )
    manifest = Manifest(
        language=language,
        source=source,
        license=license_tag,
        utterances=tuple(utterances),
        root=out_dir,
    )
    return manifest, failures


def save_index(index: UnitIndex, path: str | Path) -> None:
    """Persist as JSON with a version header; audio paths are stored
    relative to the index file."""
    path = Path(path)
    base = path.resolve().parent

    def rel(p: str) -> str:
        return os.path.relpath(Path(p).resolve(), base)

    def vec(v: np.ndarray) -> list[float]:
        return [float(x) for x in v]

    payload = {
        "format": INDEX_FORMAT,
        "version": INDEX_VERSION,
        "sample_rate": index.sample_rate,
        "frame_shift_samples": index.frame_shift_samples,
        "mfcc": {
            "num_coefficients": index.mfcc_config.num_coefficients,
            "num_mel_filters": index.mfcc_config.num_mel_filters,
            "frame_length_ms": index.mfcc_config.frame_length_ms,
            "frame_shift_ms": index.mfcc_config.frame_shift_ms,
            "pre_emphasis": index.mfcc_config.pre_emphasis,
            "window": index.mfcc_config.window,
            "include_c0": index.mfcc_config.include_c0,
            "low_freq_hz": index.mfcc_config.low_freq_hz,
            "high_freq_hz": index.mfcc_config.high_freq_hz,
        },
        "phone_mean_frames": index.phone_mean_frames,
        "audio_paths": {u: rel(p) for u, p in sorted(index.audio_paths.items())},
        "units": [
            {
                "utterance_id": r.utterance_id,
                "left": r.left_phone,
                "right": r.right_phone,
                "frames": [r.start_frame, r.junction_frame, r.end_frame],
                "samples": [r.start_sample, r.junction_sample, r.end_sample],
                "phone_extent_samples": [r.left_start_sample, r.right_end_sample],
                "start_vec": vec(r.start_vec),
                "junction_vec": vec(r.junction_vec),
                "end_vec": vec(r.end_vec),
            }
            for key in sorted(index.units)
            for r in index.units[key]
        ],
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def load_index(path: str | Path) -> UnitIndex:
    path = Path(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("format") != INDEX_FORMAT:
        raise ValueError(f"{path}: not a unit index file")
    if payload.get("version") != INDEX_VERSION:
        raise ValueError(f"{path}: unsupported index version {payload.get('version')}")
    base = path.resolve().parent

    units: dict[str, list[UnitRecord]] = {}
    by_left: dict[str, list[UnitRecord]] = {}
    by_right: dict[str, list[UnitRecord]] = {}
    for entry in payload["units"]:
        record = UnitRecord(
            utterance_id=entry["utterance_id"],
            left_phone=entry["left"],
            right_phone=entry["right"],
            start_frame=entry["frames"][0],
            junction_frame=entry["frames"][1],
            end_frame=entry["frames"][2],
            start_sample=entry["samples"][0],
            junction_sample=entry["samples"][1],
            end_sample=entry["samples"][2],
            start_vec=np.array(entry["start_vec"]),
            junction_vec=np.array(entry["junction_vec"]),
            end_vec=np.array(entry["end_vec"]),
            left_start_sample=entry["phone_extent_samples"][0],
            right_end_sample=entry["phone_extent_samples"][1],
        )
        units.setdefault(record.diphone, []).append(record)
        by_left.setdefault(record.left_phone, []).append(record)
        by_right.setdefault(record.right_phone, []).append(record)
    for bucket in (units, by_left, by_right):
        for records in bucket.values():
            records.sort(key=lambda r: (r.utterance_id, r.start_sample))

    mfcc_kwargs = payload["mfcc"]
    return UnitIndex(
        units=units,
        by_left=by_left,
        by_right=by_right,
        phone_mean_frames=payload["phone_mean_frames"],
        audio_paths={
            u: str((base / p).resolve()) for u, p in payload["audio_paths"].items()
        },
        sample_rate=payload["sample_rate"],
        frame_shift_samples=payload["frame_shift_samples"],
        mfcc_config=MfccConfig(**mfcc_kwargs),
    )
