"""Text normalization: number expansion, cleanup, and rule-based G2P.

File formats (UTF-8, `#` starts a comment line):

Number dictionary, one record per line:
    value<TAB>word              atom: integer value spoken as `word`
    @rule joiner M1 M2 TOKEN    put TOKEN between adjacent parts whose
                                magnitudes are M1 and M2; TOKEN `_` means
                                concatenate without a space
    @rule order M scale-first   emit the scale word for magnitude M before
                                its multiplier (default is multiplier-first)

G2P table, one rewrite rule per line:
    grapheme<TAB>phone [phone ...]
An empty right side silences the grapheme. Unknown letters map to
themselves; whitespace emits the word-boundary marker.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DictionaryRangeError

WORD_BOUNDARY = "<wb>"
_DIGIT_RUN = re.compile(r"[0-9]+")
_PUNCTUATION = set("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~«»¡¿‘’“”…–—")


def _magnitude(value: int) -> int:
    mag = 1
    while value >= mag * 10:
        mag *= 10
    return mag


@dataclass(frozen=True)
class NumberDictionary:
    """Cardinal-number atoms plus composition rules for one language."""

    language: str
    atoms: dict[int, str]
    joiners: dict[tuple[int, int], str] = field(default_factory=dict)
    scale_first: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if any(v < 0 for v in self.atoms):
            raise ValueError("atom values must be nonnegative")
        words = list(self.atoms.values())
        if len(set(words)) != len(words):
            raise ValueError("atom words must be distinct")

    def expand(self, value: int) -> str:
        """Spell out a nonnegative integer."""
        parts = self._decompose(value)
        out = parts[0][1]
        for (prev_value, _), (part_value, word) in zip(parts, parts[1:]):
            joiner = self.joiners.get((_magnitude(prev_value), _magnitude(part_value)))
            if joiner is None:
                out += " " + word
            elif joiner == "_":
                out += word
            else:
                out += " " + joiner + " " + word
        return out

    def _decompose(self, value: int) -> list[tuple[int, str]]:
        if value in self.atoms:
            return [(value, self.atoms[value])]
        candidates = [a for a in self.atoms if 0 < a <= value]
        if not candidates:
            raise ValueError(f"{value} is below the smallest atom")
        atom = max(candidates)
        multiplier = value // atom if atom >= 10 else 1
        parts: list[tuple[int, str]] = []
        if multiplier > 1:
            head = self._decompose(multiplier)
            tail = [(atom, self.atoms[atom])]
            parts.extend(tail + head if atom in self.scale_first else head + tail)
        else:
            parts.append((atom, self.atoms[atom]))
        remainder = value - multiplier * atom
        if remainder:
            parts.extend(self._decompose(remainder))
        return parts


def load_number_dictionary(path: str | Path, language: str = "") -> NumberDictionary:
    atoms: dict[int, str] = {}
    joiners: dict[tuple[int, int], str] = {}
    scale_first: set[int] = set()
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("@rule"):
            fields = line.split()
            if len(fields) >= 5 and fields[1] == "joiner":
                joiners[(int(fields[2]), int(fields[3]))] = fields[4]
            elif len(fields) >= 4 and fields[1] == "order" and fields[3] == "scale-first":
                scale_first.add(int(fields[2]))
            else:
                raise ValueError(f"{path}:{line_no}: unrecognized rule {line!r}")
            continue
        value_str, _, word = line.partition("\t")
        if not word:
            raise ValueError(f"{path}:{line_no}: expected value<TAB>word")
        atoms[int(value_str)] = word.strip()
    return NumberDictionary(
        language=language or Path(path).stem,
        atoms=atoms,
        joiners=joiners,
        scale_first=frozenset(scale_first),
    )


def save_number_dictionary(dictionary: NumberDictionary, path: str | Path) -> None:
    lines = [f"{v}\t{w}" for v, w in sorted(dictionary.atoms.items())]
    lines += [f"@rule joiner {m1} {m2} {tok}" for (m1, m2), tok in sorted(dictionary.joiners.items())]
    lines += [f"@rule order {m} scale-first" for m in sorted(dictionary.scale_first)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def normalize_numbers(text: str, dictionary: NumberDictionary) -> str:
    """Replace every digit run with its spelled-out form.

    Non-digit content is untouched; raises DictionaryRangeError when a run
    cannot be expressed with the dictionary's atoms.
    """

    def replace(match: re.Match) -> str:
        value = int(match.group(0))
        try:
            return dictionary.expand(value)
        except ValueError:
            raise DictionaryRangeError(value, match.start()) from None

    return _DIGIT_RUN.sub(replace, text)


@dataclass(frozen=True)
class LanguageProfile:
    """Mechanical cleanup settings for one language's text."""

    unicode_form: str = "NFC"
    strip_punctuation: bool = True
    lowercase: bool = False
    keep_characters: frozenset[str] = frozenset("'")


def clean_text(text: str, profile: LanguageProfile = LanguageProfile()) -> str:
    """Normalize Unicode form, collapse whitespace, optionally strip
    punctuation. Idempotent."""
    out = unicodedata.normalize(profile.unicode_form, text)
    if profile.lowercase:
        out = out.lower()
    if profile.strip_punctuation:
        out = "".join(
            c for c in out if c not in _PUNCTUATION or c in profile.keep_characters
        )
    return " ".join(out.split())


@dataclass(frozen=True)
class G2pTable:
    """Ordered longest-match-first rewrite rules from graphemes to phones."""

    language: str
    rules: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        for grapheme, _ in self.rules:
            if not grapheme:
                raise ValueError("rule left side must be non-empty")

    @property
    def inventory(self) -> frozenset[str]:
        phones = {p for _, out in self.rules for p in out}
        return frozenset(phones)

    def lookup(self, text: str, pos: int) -> tuple[str, tuple[str, ...]]:
        """Longest rule matching at `pos`; falls back to the single letter."""
        best: tuple[str, tuple[str, ...]] | None = None
        for grapheme, phones in self.rules:
            if text.startswith(grapheme, pos):
                if best is None or len(grapheme) > len(best[0]):
                    best = (grapheme, phones)
        if best is not None:
            return best
        letter = text[pos]
        return letter, (letter,)


def load_g2p_table(path: str | Path, language: str = "") -> G2pTable:
    rules = []
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        grapheme, sep, phones = line.partition("\t")
        if not sep:
            raise ValueError(f"{path}:{line_no}: expected grapheme<TAB>phones")
        rules.append((grapheme.strip(), tuple(phones.split())))
    return G2pTable(language=language or Path(path).stem, rules=tuple(rules))


def g2p(text: str, table: G2pTable) -> list[str]:
    """Phone sequence via longest-match-first rewriting of lowercased text.

    Whitespace between words emits WORD_BOUNDARY; leading and trailing
    whitespace emits nothing.
    """
    phones: list[str] = []
    for index, word in enumerate(text.lower().split()):
        if index:
            phones.append(WORD_BOUNDARY)
        pos = 0
        while pos < len(word):
            grapheme, out = table.lookup(word, pos)
            phones.extend(out)
            pos += len(grapheme)
    return phones


@dataclass(frozen=True)
class NormalizedText:
    """Text after cleanup and number expansion, with its phone rendering."""

    original: str
    normalized: str
    phone_sequence: tuple[str, ...]
    token_spans: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if _DIGIT_RUN.search(self.normalized):
            raise ValueError("normalized text must not contain digits")


def normalize_text(
    text: str,
    table: G2pTable,
    dictionary: NumberDictionary | None = None,
    profile: LanguageProfile = LanguageProfile(),
) -> NormalizedText:
    """Full pipeline: clean, expand numbers, derive phones and token spans."""
    cleaned = clean_text(text, profile)
    if dictionary is not None:
        cleaned = clean_text(normalize_numbers(cleaned, dictionary), profile)
    spans = []
    pos = 0
    for token in cleaned.split():
        start = cleaned.index(token, pos)
        spans.append((start, start + len(token)))
        pos = start + len(token)
    return NormalizedText(
        original=text,
        normalized=cleaned,
        phone_sequence=tuple(g2p(cleaned, table)),
        token_spans=tuple(spans),
    )
