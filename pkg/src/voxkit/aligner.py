"""Utterance-level segmentation of long-form audio against known text.

The acoustic model is one diagonal Gaussian per phone over MFCC frames.
Alignment alternates Viterbi segmentation with model re-estimation
(segmental k-means) until verse boundaries stop moving, then cuts at
verse junctions snapped to silence. An optional pause phone between
verses can be skipped at zero cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .audio import AudioClip, energy_vad
from .errors import InfeasibleAlignmentError
from .features import FeatureTrack, MfccConfig, mfcc
from .textnorm import WORD_BOUNDARY, G2pTable, g2p

PAUSE_PHONE = "pau"

# Backtrace meanings per decision column.
_STAY, _PROGRESS, _ADVANCE, _SKIP = 0, 1, 2, 3


@dataclass(frozen=True)
class AlignConfig:
    min_duration_frames: int = 3
    variance_floor: float = 1e-3
    max_iterations: int = 10
    epsilon_frames: float = 0.5
    insert_pauses: bool = True
    snap_window_frames: int = 20
    vad_threshold_db: float = 30.0
    mfcc: MfccConfig = field(default_factory=MfccConfig)


@dataclass(frozen=True)
class PhoneModelSet:
    """Diagonal-Gaussian mean/variance per phone; unseen phones fall back
    to the global statistics."""

    means: dict[str, np.ndarray]
    variances: dict[str, np.ndarray]
    global_mean: np.ndarray
    global_variance: np.ndarray
    variance_floor: float

    def mean_of(self, phone: str) -> np.ndarray:
        return self.means.get(phone, self.global_mean)

    def variance_of(self, phone: str) -> np.ndarray:
        return self.variances.get(phone, self.global_variance)


@dataclass(frozen=True)
class Segmentation:
    """Contiguous phone spans covering [0, frame_count). `positions` maps
    each span to its index in the requested phone sequence (skipped
    optional phones are absent)."""

    segments: tuple[tuple[str, int, int], ...]
    positions: tuple[int, ...]
    total_cost: float
    per_phone_cost: dict[str, float]


@dataclass(frozen=True)
class AlignedUtterance:
    verse_id: str
    text: str
    start_time: float
    end_time: float
    score: float
    segments: tuple[tuple[str, int, int], ...]


@dataclass(frozen=True)
class ChapterAlignment:
    utterances: tuple[AlignedUtterance, ...]
    iterations: int
    converged: bool
    total_cost: float
    frame_shift_ms: float
    cost_history: tuple[float, ...] = ()


def flat_segment(phones, frame_count: int, min_duration_frames: int = 1) -> Segmentation:
    """Even split of the frames over the phones, remainder left-to-right."""
    count = len(phones)
    if count == 0:
        raise ValueError("phone sequence is empty")
    if frame_count < count * min_duration_frames:
        raise InfeasibleAlignmentError(
            f"{frame_count} frames cannot hold {count} phones "
            f"at {min_duration_frames} frames each"
        )
    base, remainder = divmod(frame_count, count)
    segments = []
    start = 0
    for index, phone in enumerate(phones):
        length = base + (1 if index < remainder else 0)
        segments.append((phone, start, start + length))
        start += length
    return Segmentation(
        segments=tuple(segments),
        positions=tuple(range(count)),
        total_cost=0.0,
        per_phone_cost={},
    )


def accumulate_stats(features: FeatureTrack, segmentation: Segmentation):
    """Per-phone frame count, sum, and sum of squares."""
    stats: dict[str, list] = {}
    X = features.frames
    for phone, start, end in segmentation.segments:
        if end <= start:
            continue
        chunk = X[start:end]
        entry = stats.get(phone)
        if entry is None:
            stats[phone] = [end - start, chunk.sum(axis=0), (chunk**2).sum(axis=0)]
        else:
            entry[0] += end - start
            entry[1] = entry[1] + chunk.sum(axis=0)
            entry[2] = entry[2] + (chunk**2).sum(axis=0)
    return stats


def models_from_stats(stats, dim: int, variance_floor: float) -> PhoneModelSet:
    total_n = sum(entry[0] for entry in stats.values())
    if total_n == 0:
        raise ValueError("no frames to estimate from")
    total_sum = sum((entry[1] for entry in stats.values()), np.zeros(dim))
    total_sq = sum((entry[2] for entry in stats.values()), np.zeros(dim))
    global_mean = total_sum / total_n
    global_var = np.maximum(total_sq / total_n - global_mean**2, variance_floor)

    means = {}
    variances = {}
    for phone, (n, s, sq) in stats.items():
        mean = s / n
        means[phone] = mean
        variances[phone] = np.maximum(sq / n - mean**2, variance_floor)
    return PhoneModelSet(
        means=means,
        variances=variances,
        global_mean=global_mean,
        global_variance=global_var,
        variance_floor=variance_floor,
    )


def estimate_models(
    features: FeatureTrack, segmentation: Segmentation, variance_floor: float = 1e-3
) -> PhoneModelSet:
    """Pool each phone's frames across occurrences; mean and floored
    per-dimension variance."""
    return models_from_stats(
        accumulate_stats(features, segmentation), features.dim, variance_floor
    )


def emission_matrix(features: FeatureTrack, inventory, models: PhoneModelSet) -> np.ndarray:
    """Per-frame negative log-likelihood under each phone's Gaussian.
    Shared with cost recomputation and test oracles so sums are exact."""
    X = features.frames
    E = np.empty((X.shape[0], len(inventory)))
    for p, phone in enumerate(inventory):
        mu = models.mean_of(phone)
        var = models.variance_of(phone)
        const = float(np.log(2.0 * np.pi * var).sum())
        E[:, p] = 0.5 * (const + (((X - mu) ** 2) / var).sum(axis=1))
    return E


def segmentation_cost(features: FeatureTrack, segmentation: Segmentation,
                      models: PhoneModelSet) -> float:
    """Total frame NLL of a segmentation, accumulated in frame order."""
    inventory = sorted({phone for phone, _, _ in segmentation.segments})
    index = {phone: i for i, phone in enumerate(inventory)}
    E = emission_matrix(features, inventory, models)
    total = 0.0
    for phone, start, end in segmentation.segments:
        col = index[phone]
        for t in range(start, end):
            total += float(E[t, col])
    return total


def viterbi_segment(
    features: FeatureTrack,
    phones,
    models: PhoneModelSet,
    min_duration_frames: int = 3,
    optional=None,
) -> Segmentation:
    """Minimum-NLL monotone segmentation of the frames into the phone
    sequence, each mandatory phone at least `min_duration_frames` long.

    `optional[k]` marks positions (pauses) that may be skipped entirely at
    no cost; when realized their minimum duration is one frame. Ties prefer
    keeping the current phone over moving on.
    """
    phones = list(phones)
    K = len(phones)
    if K == 0:
        raise ValueError("phone sequence is empty")
    T = features.frame_count
    if optional is None:
        optional = [False] * K
    optional = list(optional)
    for k in range(1, K):
        if optional[k] and optional[k - 1]:
            raise ValueError("adjacent optional phones are not supported")

    durations = [1 if optional[k] else min_duration_frames for k in range(K)]
    mandatory_frames = sum(d for k, d in enumerate(durations) if not optional[k])
    if T < mandatory_frames:
        raise InfeasibleAlignmentError(
            f"{T} frames cannot hold {K - sum(optional)} mandatory phones "
            f"at {min_duration_frames} frames each"
        )

    inventory = sorted(set(phones))
    phone_col = {phone: i for i, phone in enumerate(inventory)}
    E = emission_matrix(features, inventory, models)

    # State layout: positions expanded into min-duration substates.
    durations_arr = np.array(durations, dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(durations_arr)[:-1]))
    total_states = int(durations_arr.sum())
    last_state = offsets + durations_arr - 1
    state_phone_col = np.empty(total_states, dtype=np.int64)
    state_position = np.empty(total_states, dtype=np.int64)
    for k in range(K):
        state_phone_col[offsets[k] : offsets[k] + durations[k]] = phone_col[phones[k]]
        state_position[offsets[k] : offsets[k] + durations[k]] = k

    # Up to three predecessors per state; column order fixes tie preference:
    # stay, then progress within the phone, then entering (advance or skip).
    preds = np.full((total_states, 3), -1, dtype=np.int64)
    meanings = np.full((total_states, 3), 255, dtype=np.uint8)
    for k in range(K):
        for d in range(durations[k]):
            s = offsets[k] + d
            col = 0
            if d == durations[k] - 1:
                preds[s, col] = s
                meanings[s, col] = _STAY
                col += 1
            if 0 < d:
                preds[s, col] = s - 1
                meanings[s, col] = _PROGRESS
                col += 1
            if d == 0:
                if k > 0:
                    preds[s, col] = last_state[k - 1]
                    meanings[s, col] = _ADVANCE
                    col += 1
                if k > 1 and optional[k - 1]:
                    preds[s, col] = last_state[k - 2]
                    meanings[s, col] = _SKIP
                    col += 1

    start_states = [offsets[0]]
    if optional[0] and K > 1:
        start_states.append(offsets[1])
    final_states = [last_state[K - 1]]
    if optional[K - 1] and K > 1:
        final_states.append(last_state[K - 2])

    score = np.full(total_states, np.inf)
    for s in start_states:
        score[s] = E[0, state_phone_col[s]]

    plane_bytes = (total_states + 7) // 8
    bit0 = np.zeros((T, plane_bytes), dtype=np.uint8)
    bit1 = np.zeros((T, plane_bytes), dtype=np.uint8)

    valid = preds >= 0
    pred_idx = np.where(valid, preds, 0)
    state_range = np.arange(total_states)
    emissions_by_state = E[:, state_phone_col]
    for t in range(1, T):
        cand = np.where(valid, score[pred_idx], np.inf)
        choice = np.argmin(cand, axis=1)
        score = cand[state_range, choice] + emissions_by_state[t]
        choice = choice.astype(np.uint8)
        bit0[t] = np.packbits(choice & 1, bitorder="little")
        bit1[t] = np.packbits(choice >> 1, bitorder="little")

    final = min(final_states, key=lambda s: (score[s], s))
    if not np.isfinite(score[final]):
        raise InfeasibleAlignmentError("no feasible segmentation")

    labels = np.empty(T, dtype=np.int64)
    s = int(final)
    for t in range(T - 1, 0, -1):
        labels[t] = state_position[s]
        byte = s >> 3
        bit = s & 7
        code = ((bit0[t, byte] >> bit) & 1) | (((bit1[t, byte] >> bit) & 1) << 1)
        meaning = meanings[s, code]
        if meaning == _STAY:
            pass
        elif meaning == _PROGRESS:
            s -= 1
        elif meaning == _ADVANCE:
            s = int(last_state[state_position[s] - 1])
        else:
            s = int(last_state[state_position[s] - 2])
    labels[0] = state_position[s]

    segments = []
    positions = []
    run_start = 0
    for t in range(1, T + 1):
        if t == T or labels[t] != labels[run_start]:
            k = int(labels[run_start])
            segments.append((phones[k], run_start, t))
            positions.append(k)
            run_start = t

    total = 0.0
    for t in range(T):
        total += float(emissions_by_state[t, offsets[labels[t]]])
    per_phone: dict[str, list] = {}
    for phone, start, end in segments:
        entry = per_phone.setdefault(phone, [0.0, 0])
        entry[0] += float(E[start:end, phone_col[phone]].sum())
        entry[1] += end - start
    per_phone_cost = {phone: v[0] / v[1] for phone, v in per_phone.items()}

    return Segmentation(
        segments=tuple(segments),
        positions=tuple(positions),
        total_cost=total,
        per_phone_cost=per_phone_cost,
    )


def snap_to_silence(boundary_frame: int, vad_mask, window_frames: int = 20,
                    lo: int = 0, hi: int | None = None) -> int:
    """Nearest inactive frame within the window (left preferred on ties);
    the boundary itself when no silence is in reach."""
    mask = np.asarray(vad_mask, dtype=bool)
    if hi is None:
        hi = len(mask)
    lo = max(lo, 0)
    hi = min(hi, len(mask))
    for distance in range(window_frames + 1):
        for candidate in (boundary_frame - distance, boundary_frame + distance):
            if lo <= candidate < hi and not mask[candidate]:
                return candidate
    return boundary_frame


def verse_phone_positions(verses, table: G2pTable, insert_pauses: bool):
    """Chapter phone sequence with optional pauses, plus each verse's
    position range within it."""
    phones: list[str] = []
    optional: list[bool] = []
    ranges: list[tuple[int, int]] = []
    if insert_pauses:
        phones.append(PAUSE_PHONE)
        optional.append(True)
    for verse_id, text in verses:
        if any(c.isdigit() for c in text):
            raise ValueError(f"verse {verse_id!r} contains digits; normalize first")
        verse_phones = [p for p in g2p(text, table) if p != WORD_BOUNDARY]
        if not verse_phones:
            raise ValueError(f"verse {verse_id!r} has no phones")
        ranges.append((len(phones), len(phones) + len(verse_phones)))
        phones.extend(verse_phones)
        optional.extend([False] * len(verse_phones))
        if insert_pauses:
            phones.append(PAUSE_PHONE)
            optional.append(True)
    return phones, optional, ranges


def _verse_bounds(segmentation: Segmentation, ranges) -> list[tuple[int, int]]:
    start_of = {}
    end_of = {}
    for (phone, seg_start, seg_end), position in zip(
        segmentation.segments, segmentation.positions
    ):
        start_of[position] = seg_start
        end_of[position] = seg_end
    return [(start_of[lo], end_of[hi - 1]) for lo, hi in ranges]


def _build_utterances(clip, verses, phones, ranges, features, segmentation,
                      models, config) -> tuple[AlignedUtterance, ...]:
    """Verse spans to snapped, non-overlapping utterances with scores."""
    bounds = _verse_bounds(segmentation, ranges)
    hop = config.mfcc.frame_shift_samples(clip.sample_rate)
    frame_len = config.mfcc.frame_length_samples(clip.sample_rate)
    vad = energy_vad(clip, config.mfcc.frame_shift_ms, config.vad_threshold_db)

    inventory = sorted(set(phones))
    E = emission_matrix(features, inventory, models)
    col = {phone: i for i, phone in enumerate(inventory)}
    position_segments = list(zip(segmentation.positions, segmentation.segments))

    utterances = []
    previous_end_sample = 0
    for v, ((verse_id, text), (raw_start, raw_end)) in enumerate(zip(verses, bounds)):
        lo_bound = bounds[v - 1][1] if v > 0 else 0
        hi_bound = bounds[v + 1][0] if v + 1 < len(bounds) else features.frame_count
        start_frame = snap_to_silence(
            raw_start, vad, config.snap_window_frames, lo=lo_bound, hi=raw_end
        )
        end_frame = snap_to_silence(
            raw_end, vad, config.snap_window_frames, lo=start_frame + 1, hi=hi_bound + 1
        )
        start_sample = max(start_frame * hop, previous_end_sample)
        end_sample = min(end_frame * hop + (frame_len - hop), len(clip.samples))
        if v + 1 < len(bounds):
            end_sample = min(end_sample, bounds[v + 1][0] * hop)
        end_sample = max(end_sample, start_sample + hop)
        previous_end_sample = end_sample

        frame_costs = [
            float(E[t, col[phones[k]]])
            for k, (phone, seg_start, seg_end) in position_segments
            if ranges[v][0] <= k < ranges[v][1]
            for t in range(seg_start, seg_end)
        ]
        verse_segments = tuple(
            segment
            for k, segment in position_segments
            if ranges[v][0] <= k < ranges[v][1]
        )
        utterances.append(
            AlignedUtterance(
                verse_id=verse_id,
                text=text,
                start_time=start_sample / clip.sample_rate,
                end_time=end_sample / clip.sample_rate,
                score=float(np.mean(frame_costs)),
                segments=verse_segments,
            )
        )
    return tuple(utterances)


def _adaptive_active_mask(clip: AudioClip, frame_shift_ms: float, frame_count: int):
    """Speech/silence split by two-means clustering of frame log energies.

    The fixed 30 dB-below-peak rule misses gaps whose noise floor is louder
    than that; a self-calibrated threshold keeps the initial segmentation
    usable on noisy recordings.
    """
    hop = max(1, int(round(clip.sample_rate * frame_shift_ms / 1000.0)))
    n = min(frame_count, len(clip.samples) // hop)
    power = np.mean(clip.samples[: n * hop].reshape(n, hop) ** 2, axis=1)
    log_e = 10.0 * np.log10(np.maximum(power, 1e-12))
    lo, hi = float(log_e.min()), float(log_e.max())
    if hi - lo < 10.0:
        return np.ones(n, dtype=bool)
    c_low, c_high = lo, hi
    for _ in range(20):
        split = (c_low + c_high) / 2.0
        low = log_e[log_e <= split]
        high = log_e[log_e > split]
        if len(low) == 0 or len(high) == 0:
            break
        c_low, c_high = float(low.mean()), float(high.mean())
    return log_e > (c_low + c_high) / 2.0


def _active_islands(mask, min_gap_frames: int = 3):
    """Maximal active runs; gaps shorter than `min_gap_frames` are bridged."""
    islands = []
    start = None
    gap = 0
    for t, active in enumerate(mask):
        if active:
            if start is None:
                start = t
            gap = 0
        elif start is not None:
            gap += 1
            if gap >= min_gap_frames:
                islands.append((start, t - gap + 1))
                start = None
    if start is not None:
        islands.append((start, len(mask) - gap if gap else len(mask)))
    return islands


def _initial_segmentation(phones, ranges, frame_count: int, clip,
                          frame_shift_ms: float) -> Segmentation:
    """Flat start seeded by detected speech islands.

    When the islands match the verses one-to-one, each verse's phones are
    spread over its island and pauses take the gaps; otherwise fall back
    to trimming leading/trailing silence. A plain even split would seed
    verse phones with silence, a stable bad fixed point for segmental
    k-means on gappy audio.
    """
    mask = _adaptive_active_mask(clip, frame_shift_ms, frame_count)
    islands = [
        (start, end)
        for start, end in _active_islands(mask)
        if end - start >= 3
    ]

    if len(islands) == len(ranges) and all(
        end - start >= hi - lo for (start, end), (lo, hi) in zip(islands, ranges)
    ):
        segments = []
        positions = []
        cursor = 0
        for v, ((island_start, island_end), (lo, hi)) in enumerate(zip(islands, ranges)):
            if lo > 0:  # the pause position before this verse
                segments.append((phones[lo - 1], cursor, island_start))
                positions.append(lo - 1)
            inner = flat_segment(phones[lo:hi], island_end - island_start)
            segments.extend(
                (p, s + island_start, e + island_start) for p, s, e in inner.segments
            )
            positions.extend(k + lo for k in inner.positions)
            cursor = island_end
        if ranges[-1][1] < len(phones):  # trailing pause
            segments.append((phones[-1], cursor, frame_count))
            positions.append(len(phones) - 1)
        return Segmentation(
            segments=tuple(segments), positions=tuple(positions),
            total_cost=0.0, per_phone_cost={},
        )

    active = np.flatnonzero(mask)
    if (
        len(active) == 0
        or len(phones) < 3
        or int(active[0]) + len(phones) - 2 > frame_count
    ):
        return flat_segment(phones, frame_count)
    lead = int(active[0])
    tail_start = min(max(int(active[-1]) + 1, lead + len(phones) - 2), frame_count)
    inner = flat_segment(phones[1:-1], tail_start - lead)
    segments = (
        [(phones[0], 0, lead)]
        + [(p, s + lead, e + lead) for p, s, e in inner.segments]
        + [(phones[-1], tail_start, frame_count)]
    )
    positions = (0, *[k + 1 for k in inner.positions], len(phones) - 1)
    return Segmentation(
        segments=tuple(segments), positions=positions,
        total_cost=0.0, per_phone_cost={},
    )


def align_chapter(clip: AudioClip, verses, table: G2pTable,
                  config: AlignConfig = AlignConfig()) -> ChapterAlignment:
    """Iteratively segment a chapter against its verse texts.

    `verses` is a sequence of (verse_id, normalized_text). Non-convergence
    within max_iterations is reported via `converged`, not an error.
    """
    verses = list(verses)
    if not verses:
        raise ValueError("no verses given")
    phones, optional, ranges = verse_phone_positions(verses, table, config.insert_pauses)

    features = mfcc(clip, config.mfcc)
    if config.insert_pauses:
        segmentation = _initial_segmentation(
            phones, ranges, features.frame_count, clip, config.mfcc.frame_shift_ms
        )
    else:
        segmentation = flat_segment(phones, features.frame_count)

    previous_bounds = None
    iterations = 0
    converged = False
    models = None
    cost_history = []
    for _ in range(config.max_iterations):
        iterations += 1
        models = estimate_models(features, segmentation, config.variance_floor)
        segmentation = viterbi_segment(
            features, phones, models, config.min_duration_frames, optional
        )
        cost_history.append(segmentation.total_cost)
        bounds = _verse_bounds(segmentation, ranges)
        if previous_bounds is not None:
            movement = np.mean(
                [
                    (abs(a - c) + abs(b - d)) / 2.0
                    for (a, b), (c, d) in zip(bounds, previous_bounds)
                ]
            )
            if movement < config.epsilon_frames:
                converged = True
                break
        previous_bounds = bounds

    utterances = _build_utterances(
        clip, verses, phones, ranges, features, segmentation, models, config
    )
    return ChapterAlignment(
        utterances=utterances,
        iterations=iterations,
        converged=converged,
        total_cost=segmentation.total_cost,
        frame_shift_ms=config.mfcc.frame_shift_ms,
        cost_history=tuple(cost_history),
    )


def filter_by_score(alignment: ChapterAlignment, keep_fraction: float) -> ChapterAlignment:
    """Keep the best-scoring fraction of utterances, original order
    preserved; ties keep the earlier utterance."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must be in (0, 1]")
    if keep_fraction == 1.0:
        return alignment
    n_keep = math.ceil(len(alignment.utterances) * keep_fraction)
    ranked = sorted(
        range(len(alignment.utterances)),
        key=lambda i: (alignment.utterances[i].score, i),
    )[:n_keep]
    kept = tuple(alignment.utterances[i] for i in sorted(ranked))
    return replace(alignment, utterances=kept)


def align_corpus(chapters, table: G2pTable, config: AlignConfig = AlignConfig(),
                 pool: bool = False) -> list[ChapterAlignment]:
    """Align chapters independently; with `pool`, re-estimate phone models
    from all chapters together and re-segment each chapter once more."""
    results = [align_chapter(clip, verses, table, config) for clip, verses in chapters]
    if not pool:
        return results

    contexts = []
    pooled: dict[str, list] = {}
    for (clip, verses), alignment in zip(chapters, results):
        verses = list(verses)
        phones, optional, ranges = verse_phone_positions(
            verses, table, config.insert_pauses
        )
        features = mfcc(clip, config.mfcc)
        covered = Segmentation(
            segments=tuple(
                segment for u in alignment.utterances for segment in u.segments
            ),
            positions=(),
            total_cost=alignment.total_cost,
            per_phone_cost={},
        )
        for phone, entry in accumulate_stats(features, covered).items():
            pool_entry = pooled.get(phone)
            if pool_entry is None:
                pooled[phone] = list(entry)
            else:
                pool_entry[0] += entry[0]
                pool_entry[1] = pool_entry[1] + entry[1]
                pool_entry[2] = pool_entry[2] + entry[2]
        contexts.append((clip, verses, phones, optional, ranges, features))

    models = models_from_stats(pooled, contexts[0][5].dim, config.variance_floor)

    refined = []
    for clip, verses, phones, optional, ranges, features in contexts:
        segmentation = viterbi_segment(
            features, phones, models, config.min_duration_frames, optional
        )
        utterances = _build_utterances(
            clip, verses, phones, ranges, features, segmentation, models, config
        )
        refined.append(
            ChapterAlignment(
                utterances=utterances,
                iterations=1,
                converged=True,
                total_cost=segmentation.total_cost,
                frame_shift_ms=config.mfcc.frame_shift_ms,
            )
        )
    return refined
