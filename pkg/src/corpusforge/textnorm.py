"""Language-profile-driven text normalization and tokenization.

Two normalization conventions are supported:

* ``WITH_PC``  -- punctuation and capitalization retained.  Characters
  outside the profile alphabet, the profile's kept punctuation, digits,
  and whitespace are dropped; whitespace runs collapse to single spaces.
* ``NO_PC``    -- additionally all punctuation is removed and, for cased
  profiles, text is lowercased.  Unicameral profiles (Georgian) have no
  case distinction and are left unchanged.

Built-in profiles: ``hy`` (Armenian, cased, full native punctuation set
plus ASCII period/comma and guillemets) and ``ka`` (Georgian, unicameral,
keeps periods, commas, and question marks).  Custom profiles load from a
JSON file, see :func:`build_profile`.
"""

from __future__ import annotations

import enum
import json
import os
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, MutableMapping

from .errors import ProfileError


class NormalizationMode(enum.Enum):
    """Normalization convention: keep or strip punctuation/capitalization."""

    WITH_PC = "with_pc"
    NO_PC = "no_pc"

    @classmethod
    def parse(cls, value: "str | NormalizationMode") -> "NormalizationMode":
        if isinstance(value, NormalizationMode):
            return value
        try:
            return cls(value.lower())
        except ValueError:
            raise ProfileError(
                f"unknown normalization mode {value!r}; expected 'with_pc' or 'no_pc'"
            ) from None


WITH_PC = NormalizationMode.WITH_PC
NO_PC = NormalizationMode.NO_PC


@dataclass(frozen=True)
class LanguageProfile:
    """Per-language normalization rules.

    ``kept_punctuation`` is an ordered tuple of single code points the
    WITH_PC convention retains.  ``alphabet`` is the set of letter code
    points that survive normalization; digits and spaces always survive.
    """

    language: str
    cased: bool
    kept_punctuation: tuple[str, ...]
    alphabet: frozenset[str]
    name: str = ""
    _punct_set: frozenset[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        punct = frozenset(self.kept_punctuation)
        if punct & self.alphabet:
            overlap = "".join(sorted(punct & self.alphabet))
            raise ProfileError(
                f"profile {self.language!r}: punctuation overlaps alphabet: {overlap!r}"
            )
        for p in self.kept_punctuation:
            if len(p) != 1:
                raise ProfileError(
                    f"profile {self.language!r}: punctuation entries must be "
                    f"single code points, got {p!r}"
                )
        object.__setattr__(self, "_punct_set", punct)

    def is_punctuation(self, ch: str) -> bool:
        return ch in self._punct_set

    def is_letter(self, ch: str) -> bool:
        return ch in self.alphabet


def _expand_ranges(ranges: Iterable[tuple[int, int]]) -> frozenset[str]:
    chars = set()
    for lo, hi in ranges:
        if lo > hi:
            raise ProfileError(f"bad alphabet range U+{lo:04X}..U+{hi:04X}")
        chars.update(chr(c) for c in range(lo, hi + 1))
    return frozenset(chars)


_LATIN_RANGES = [(0x41, 0x5A), (0x61, 0x7A)]

# Armenian letters: uppercase U+0531-0556, lowercase U+0561-0587. Basic Latin
# is included so loanwords and code-switched fragments survive normalization.
_ARMENIAN_RANGES = [(0x0531, 0x0556), (0x0561, 0x0587)] + _LATIN_RANGES

# Georgian Mkhedruli (modern plus archaic letters), skipping U+10FB which is
# a paragraph separator, not a letter.
_GEORGIAN_RANGES = [(0x10D0, 0x10FA), (0x10FD, 0x10FF)] + _LATIN_RANGES

# Armenian punctuation of the native Unicode block, plus ASCII period/comma
# and guillemets as used in Armenian orthography.
_ARMENIAN_PUNCT = (
    "։",  # ։ full stop
    "՞",  # ՞ question mark
    "՜",  # ՜ exclamation mark
    "՛",  # ՛ emphasis mark
    "՝",  # ՝ comma-like separation mark
    "՟",  # ՟ abbreviation mark
    "՚",  # ՚ apostrophe
    "ՙ",  # ՙ left half ring
    "֊",  # ֊ hyphen
    ".",
    ",",
    "«",  # «
    "»",  # »
)

_GEORGIAN_PUNCT = (".", ",", "?")

_BUILTIN_PROFILES = {
    "hy": dict(
        language="hy",
        cased=True,
        kept_punctuation=_ARMENIAN_PUNCT,
        alphabet=_expand_ranges(_ARMENIAN_RANGES),
        name="Armenian",
    ),
    "ka": dict(
        language="ka",
        cased=False,
        kept_punctuation=_GEORGIAN_PUNCT,
        alphabet=_expand_ranges(_GEORGIAN_RANGES),
        name="Georgian",
    ),
}

_PROFILE_FILE_KEYS = {"language", "cased", "kept_punctuation", "alphabet_ranges", "name"}


def _parse_codepoint(value: "str | int") -> int:
    if isinstance(value, int):
        return value
    s = value.strip()
    if s.upper().startswith("U+"):
        return int(s[2:], 16)
    if len(s) == 1:
        return ord(s)
    raise ProfileError(f"cannot parse code point {value!r}; use an int, 'U+XXXX', or a single character")


def load_profile_file(path: "str | Path") -> LanguageProfile:
    """Parse a profile JSON file.

    Required keys: ``language``, ``cased``, ``kept_punctuation`` (list of
    single characters or ``U+XXXX`` strings), ``alphabet_ranges`` (list of
    inclusive ``[lo, hi]`` code-point pairs).  Optional: ``name``.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ProfileError(f"cannot read profile file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ProfileError(f"profile file {path}: expected a JSON object")
    unknown = set(data) - _PROFILE_FILE_KEYS
    if unknown:
        raise ProfileError(f"profile file {path}: unknown keys {sorted(unknown)}")
    missing = {"language", "cased", "kept_punctuation", "alphabet_ranges"} - set(data)
    if missing:
        raise ProfileError(f"profile file {path}: missing keys {sorted(missing)}")
    punct = tuple(chr(_parse_codepoint(p)) for p in data["kept_punctuation"])
    ranges = []
    for r in data["alphabet_ranges"]:
        if not isinstance(r, (list, tuple)) or len(r) != 2:
            raise ProfileError(f"profile file {path}: alphabet_ranges entries must be [lo, hi] pairs")
        ranges.append((_parse_codepoint(r[0]), _parse_codepoint(r[1])))
    return LanguageProfile(
        language=str(data["language"]),
        cased=bool(data["cased"]),
        kept_punctuation=punct,
        alphabet=_expand_ranges(ranges),
        name=str(data.get("name", data["language"])),
    )


def build_profile(language: str) -> LanguageProfile:
    """Return the built-in profile for a language code, or parse a profile file.

    ``language`` is a built-in code (``hy``, ``ka``) or a path to a profile
    JSON file.  Unknown codes raise :class:`ProfileError` listing the
    supported built-ins.
    """
    key = language.lower()
    if key in _BUILTIN_PROFILES:
        return LanguageProfile(**_BUILTIN_PROFILES[key])
    if os.path.exists(language):
        return load_profile_file(language)
    supported = ", ".join(sorted(_BUILTIN_PROFILES))
    raise ProfileError(
        f"unknown language {language!r}: supported built-in codes are {supported}; "
        f"pass a profile file path for other languages"
    )


def _is_digit(ch: str) -> bool:
    # Decimal digits of any script are kept verbatim in both modes.
    return unicodedata.category(ch) == "Nd"


def normalize(
    text: str,
    profile: LanguageProfile,
    mode: "NormalizationMode | str" = WITH_PC,
    dropped: "MutableMapping[str, int] | None" = None,
) -> str:
    """Normalize ``text`` under the profile and mode.

    WITH_PC keeps profile punctuation and case; NO_PC strips punctuation
    and lowercases cased profiles.  Whitespace runs collapse to a single
    space and the result is stripped.  Characters outside the permitted
    sets are dropped; pass a counter as ``dropped`` to collect them.
    """
    mode = NormalizationMode.parse(mode)
    keep_punct = mode is WITH_PC
    out = []
    for ch in text:
        if ch.isspace():
            out.append(" ")
        elif ch in profile.alphabet or _is_digit(ch):
            out.append(ch)
        elif profile.is_punctuation(ch):
            if keep_punct:
                out.append(ch)
        elif dropped is not None:
            dropped[ch] = dropped.get(ch, 0) + 1
    result = " ".join("".join(out).split())
    if mode is NO_PC and profile.cased:
        result = result.lower()
    return result


def tokenize_words(text: str) -> list[str]:
    """Split normalized text into word tokens (never yields empty tokens)."""
    return text.split()


def extract_punctuation(text: str, profile: LanguageProfile) -> list[tuple[str, int]]:
    """Extract punctuation symbols with the index of the preceding word.

    ``text`` is expected in WITH_PC normalized form.  Returns ``(symbol,
    word_index)`` pairs in reading order; ``word_index`` is -1 for symbols
    before the first word.  A word starts at the first letter or digit of
    each whitespace-delimited token, so punctuation attached anywhere in a
    token reports that token's index.
    """
    events: list[tuple[str, int]] = []
    word_index = -1
    counted_in_token = False
    for ch in text:
        if ch.isspace():
            counted_in_token = False
        elif profile.is_punctuation(ch):
            events.append((ch, word_index))
        else:
            if not counted_in_token:
                word_index += 1
                counted_in_token = True
    return events


def punctuation_symbols(text: str, profile: LanguageProfile) -> list[str]:
    """Just the punctuation symbol sequence of ``text``, in reading order."""
    return [sym for sym, _ in extract_punctuation(text, profile)]
