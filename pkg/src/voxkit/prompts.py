"""Recording-prompt selection: greedy diphone-coverage maximization with a
length penalty, as used to pick what a voice talent records."""

from __future__ import annotations

from dataclasses import dataclass

from .textnorm import WORD_BOUNDARY, G2pTable, g2p

DEFAULT_LENGTH_PENALTY_ALPHA = 0.5
DEFAULT_TARGET_COUNT = 1500


@dataclass(frozen=True)
class CandidateUtterance:
    utterance_id: str
    text: str
    phones: tuple[str, ...]
    diphones: tuple[tuple[str, str], ...]

    @property
    def phone_count(self) -> int:
        return sum(1 for p in self.phones if p != WORD_BOUNDARY)


@dataclass(frozen=True)
class SelectionResult:
    selected_ids: tuple[str, ...]
    covered_types: frozenset[tuple[str, str]]
    coverage_ratio: float
    marginal_gains: tuple[int, ...]
    shortfall: bool


def extract_units(utterance_id: str, text: str, table: G2pTable) -> CandidateUtterance:
    """Phones and diphones of one candidate.

    Diphones are consecutive phone pairs, with word-boundary markers
    standing in as context where words meet. A single-phone utterance has
    no pair, so it degenerates to its two edge-boundary diphones.
    """
    phones = tuple(g2p(text, table))
    real = [p for p in phones if p != WORD_BOUNDARY]
    if not real:
        raise ValueError(f"candidate {utterance_id!r} has no phones")
    diphones = tuple(zip(phones, phones[1:]))
    if not diphones:
        diphones = ((WORD_BOUNDARY, phones[0]), (phones[0], WORD_BOUNDARY))
    return CandidateUtterance(
        utterance_id=utterance_id, text=text, phones=phones, diphones=diphones
    )


def select_prompts(
    candidates,
    target_count: int = DEFAULT_TARGET_COUNT,
    length_penalty_alpha: float = DEFAULT_LENGTH_PENALTY_ALPHA,
) -> SelectionResult:
    """Greedy pick of the utterance with the best new-types-per-length
    score until the target count is reached.

    Score is (new diphone types) / phone_count ** alpha. Ties prefer the
    shorter utterance, then the lexicographically smaller id. When no
    remaining candidate adds coverage the rest is filled shortest-first.
    """
    candidates = list(candidates)
    if target_count < 1:
        raise ValueError("target_count must be at least 1")
    if not candidates:
        raise ValueError("no candidates to select from")

    pool_types = set()
    for candidate in candidates:
        pool_types.update(candidate.diphones)

    shortfall = target_count > len(candidates)
    goal = min(target_count, len(candidates))

    remaining = {c.utterance_id: c for c in candidates}
    covered: set[tuple[str, str]] = set()
    selected: list[str] = []
    gains: list[int] = []

    while len(selected) < goal:
        best_key = None
        best_candidate = None
        best_gain = 0
        for candidate in remaining.values():
            gain = len(set(candidate.diphones) - covered)
            if gain == 0:
                continue
            score = gain / candidate.phone_count**length_penalty_alpha
            key = (-score, candidate.phone_count, candidate.utterance_id)
            if best_key is None or key < best_key:
                best_key = key
                best_candidate = candidate
                best_gain = gain
        if best_candidate is None:
            break
        selected.append(best_candidate.utterance_id)
        gains.append(best_gain)
        covered.update(best_candidate.diphones)
        del remaining[best_candidate.utterance_id]

    if len(selected) < goal:
        filler = sorted(
            remaining.values(), key=lambda c: (c.phone_count, c.utterance_id)
        )
        for candidate in filler[: goal - len(selected)]:
            selected.append(candidate.utterance_id)
            gains.append(0)

    return SelectionResult(
        selected_ids=tuple(selected),
        covered_types=frozenset(covered),
        coverage_ratio=len(covered) / len(pool_types) if pool_types else 0.0,
        marginal_gains=tuple(gains),
        shortfall=shortfall,
    )


@dataclass(frozen=True)
class CoverageReport:
    covered_count: int
    pool_type_count: int
    missing: tuple[tuple[str, str], ...]
    duration_proxy_total: int


def coverage_report(selection: SelectionResult, candidates) -> CoverageReport:
    """Recount coverage of a selection against its candidate pool."""
    by_id = {c.utterance_id: c for c in candidates}
    pool_types = set()
    for candidate in by_id.values():
        pool_types.update(candidate.diphones)
    covered = set()
    duration = 0
    for utterance_id in selection.selected_ids:
        candidate = by_id[utterance_id]
        covered.update(candidate.diphones)
        duration += candidate.phone_count
    return CoverageReport(
        covered_count=len(covered),
        pool_type_count=len(pool_types),
        missing=tuple(sorted(pool_types - covered)),
        duration_proxy_total=duration,
    )
