"""Edit-distance machinery, word-safe chunking, and hypothesis-to-reference
matching for long-audio segmentation.

The matcher pairs word-timestamped ASR output with spans of a long
reference transcript: hypotheses are chunked at word boundaries, each
chunk is matched to the reference window minimizing character error rate,
and the search anchor advances monotonically so matched spans never
overlap.  Distance-only queries run through a bit-parallel scorer
(Myers' algorithm in Hyyro's formulation), which keeps the window search
linear in window characters.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Hashable, Iterable, Sequence

from .errors import AlignmentError, ManifestError
from .manifest import ManifestRecord, copy_record
from .textnorm import NO_PC, LanguageProfile, NormalizationMode, normalize


class EditOpKind(enum.Enum):
    MATCH = "match"
    SUB = "sub"
    DEL = "del"
    INS = "ins"


@dataclass(frozen=True)
class EditOp:
    """One step of an alignment path; indices are into ref/hyp token lists."""

    kind: EditOpKind
    ref_index: int | None
    hyp_index: int | None


@dataclass(frozen=True)
class EditAlignment:
    """Minimal-cost alignment between two token sequences."""

    distance: int
    path: tuple[EditOp, ...]

    @property
    def substitutions(self) -> int:
        return sum(1 for op in self.path if op.kind is EditOpKind.SUB)

    @property
    def deletions(self) -> int:
        return sum(1 for op in self.path if op.kind is EditOpKind.DEL)

    @property
    def insertions(self) -> int:
        return sum(1 for op in self.path if op.kind is EditOpKind.INS)


def _strip_common(ref: Sequence, hyp: Sequence) -> tuple[int, int]:
    """Length of the common prefix and suffix (non-overlapping)."""
    n, m = len(ref), len(hyp)
    pre = 0
    while pre < n and pre < m and ref[pre] == hyp[pre]:
        pre += 1
    suf = 0
    while suf < n - pre and suf < m - pre and ref[n - 1 - suf] == hyp[m - 1 - suf]:
        suf += 1
    return pre, suf


def edit_distance(ref_tokens: Sequence, hyp_tokens: Sequence) -> EditAlignment:
    """Unit-cost Levenshtein alignment with a deterministic backtrace.

    Ties are broken MATCH > SUB > DEL > INS, so the path is identical
    across runs and platforms.  Tokens may be characters (pass strings)
    or words (pass lists).
    """
    n0, m0 = len(ref_tokens), len(hyp_tokens)
    pre, suf = _strip_common(ref_tokens, hyp_tokens)
    a = ref_tokens[pre : n0 - suf]
    b = hyp_tokens[pre : m0 - suf]
    n, m = len(a), len(b)

    rows = [list(range(m + 1))]
    prev = rows[0]
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1] + (ai != b[j - 1])
            down = prev[j] + 1
            if down < best:
                best = down
            left = cur[j - 1] + 1
            if left < best:
                best = left
            cur[j] = best
        rows.append(cur)
        prev = cur
    distance = rows[n][m]

    core: list[EditOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        value = rows[i][j]
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] and rows[i - 1][j - 1] == value:
            core.append(EditOp(EditOpKind.MATCH, pre + i - 1, pre + j - 1))
            i -= 1
            j -= 1
        elif i > 0 and j > 0 and rows[i - 1][j - 1] + 1 == value:
            core.append(EditOp(EditOpKind.SUB, pre + i - 1, pre + j - 1))
            i -= 1
            j -= 1
        elif i > 0 and rows[i - 1][j] + 1 == value:
            core.append(EditOp(EditOpKind.DEL, pre + i - 1, None))
            i -= 1
        else:
            core.append(EditOp(EditOpKind.INS, None, pre + j - 1))
            j -= 1
    core.reverse()

    path = (
        [EditOp(EditOpKind.MATCH, k, k) for k in range(pre)]
        + core
        + [
            EditOp(EditOpKind.MATCH, n0 - suf + k, m0 - suf + k)
            for k in range(suf)
        ]
    )
    return EditAlignment(distance=distance, path=tuple(path))


class LevenshteinMatcher:
    """Distance-only Levenshtein scorer with a fixed pattern.

    Bit-parallel (Myers 1999 / Hyyro 2003); Python's arbitrary-precision
    ints remove the 64-symbol pattern limit.  Reuse one matcher to score
    many candidate texts against the same pattern.
    """

    def __init__(self, pattern: Sequence[Hashable]):
        self.pattern = pattern
        self.m = m = len(pattern)
        peq: dict[Hashable, int] = {}
        for i, sym in enumerate(pattern):
            peq[sym] = peq.get(sym, 0) | (1 << i)
        self._peq = peq
        self._mask = (1 << m) - 1
        self._last = 1 << (m - 1) if m else 0

    def distance(self, text: Sequence[Hashable]) -> int:
        m = self.m
        if m == 0:
            return len(text)
        peq_get = self._peq.get
        mask = self._mask
        last = self._last
        vp = mask
        vn = 0
        score = m
        for sym in text:
            eq = peq_get(sym, 0)
            xv = eq | vn
            xh = (((eq & vp) + vp) ^ vp) | eq
            ph = vn | (~(xh | vp) & mask)
            mh = vp & xh
            if ph & last:
                score += 1
            elif mh & last:
                score -= 1
            ph = ((ph << 1) | 1) & mask
            mh = (mh << 1) & mask
            vp = mh | (~(xv | ph) & mask)
            vn = ph & xv
        return score


def levenshtein(ref_tokens: Sequence[Hashable], hyp_tokens: Sequence[Hashable]) -> int:
    """Unit-cost edit distance (distance only, no path)."""
    # pattern = shorter side: bit-vector width tracks the smaller sequence
    if len(ref_tokens) <= len(hyp_tokens):
        return LevenshteinMatcher(ref_tokens).distance(hyp_tokens)
    return LevenshteinMatcher(hyp_tokens).distance(ref_tokens)


def cer(ref_text: str, hyp_text: str) -> float:
    """Character error rate: edit distance / max(1, reference length).

    Characters include single inter-word spaces; both sides should be
    normalized with the same profile and mode before calling.
    """
    return levenshtein(ref_text, hyp_text) / max(1, len(ref_text))


@dataclass(frozen=True)
class TimedWord:
    """A word with start/end timestamps in seconds."""

    word: str
    start: float
    end: float

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise AlignmentError(f"timed word {self.word!r}: start {self.start} must precede end {self.end}")


def validate_timed_words(words: Sequence[TimedWord]) -> None:
    """Check that starts are non-decreasing and spans do not overlap."""
    for i in range(1, len(words)):
        if words[i].start < words[i - 1].start:
            raise AlignmentError(f"timed words out of order at index {i}")
        if words[i].start < words[i - 1].end:
            raise AlignmentError(f"timed words overlap at index {i}")


@dataclass(frozen=True)
class Segment:
    """A word-safe chunk of hypothesis words, optionally matched to reference text."""

    parent_audio: str
    offset: float
    duration: float
    hyp_text: str
    word_span: tuple[int, int]
    ref_text: str | None = None
    cer: float | None = None
    ref_span: tuple[int, int] | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise AlignmentError(f"segment duration must be > 0, got {self.duration}")
        if self.ref_text is not None and self.cer is None:
            raise AlignmentError("segment with ref_text must carry a cer value")

    @property
    def end(self) -> float:
        return self.offset + self.duration

    def flagged(self, *flags: str) -> "Segment":
        return replace(self, flags=self.flags + flags)


#: Flag set on a single word that alone exceeds the chunk duration bound.
OVER_LENGTH = "over_length"
#: Flag set when the reference ran out before this chunk could be matched.
UNMATCHED = "unmatched"
#: Flag set when the best match's CER exceeds the acceptance threshold.
REJECTED = "rejected"
#: Flag set when a chunk's normalized hypothesis text is empty.
EMPTY_HYPOTHESIS = "empty_hypothesis"


def chunk_by_timestamps(
    timed_words: Sequence[TimedWord],
    max_dur: float = 20.0,
    gap_break: float = 1.0,
    parent_audio: str = "",
) -> list[Segment]:
    """Greedily group timed words into chunks that never split a word.

    A chunk closes when adding the next word would stretch it past
    ``max_dur`` (first word start to next word end) or when the gap to
    the next word exceeds ``gap_break``.  A single word longer than
    ``max_dur`` becomes its own chunk flagged ``over_length``.
    """
    validate_timed_words(timed_words)
    if not timed_words:
        return []

    chunks: list[Segment] = []

    def close(first: int, last: int) -> None:
        words = timed_words[first : last + 1]
        duration = words[-1].end - words[0].start
        flags = (OVER_LENGTH,) if duration > max_dur else ()
        chunks.append(
            Segment(
                parent_audio=parent_audio,
                offset=words[0].start,
                duration=duration,
                hyp_text=" ".join(w.word for w in words),
                word_span=(first, last),
                flags=flags,
            )
        )

    first = 0
    for i in range(1, len(timed_words)):
        gap = timed_words[i].start - timed_words[i - 1].end
        stretch = timed_words[i].end - timed_words[first].start
        if gap > gap_break or stretch > max_dur:
            close(first, i - 1)
            first = i
    close(first, len(timed_words) - 1)
    return chunks


def match_reference_span(
    ref_words: Sequence[str],
    hyp_text: str,
    anchor: int,
    slack: float = 0.3,
) -> tuple[tuple[int, int], float]:
    """Find the reference window best matching a hypothesis chunk.

    Candidate windows start in ``[anchor, anchor + slack*L + 10]`` and
    span ``[ceil((1-slack)*L), floor((1+slack)*L)+1]`` words, where L is
    the hypothesis word count; windows are clipped at the reference end.
    Returns ``((first, last), cer)`` for the window minimizing CER
    against ``hyp_text``; ties break to the earliest start, then the
    shortest window.  Both sides must be normalized alike.
    """
    hyp_words = hyp_text.split()
    if not hyp_words:
        raise AlignmentError("empty hypothesis text")
    n = len(ref_words)
    if anchor < 0 or anchor >= n:
        raise AlignmentError(f"reference exhausted (anchor {anchor}, reference has {n} words)")

    length = len(hyp_words)
    max_start = min(n - 1, anchor + int(slack * length) + 10)
    len_lo = max(1, math.ceil((1.0 - slack) * length))
    len_hi = int((1.0 + slack) * length) + 1

    matcher = LevenshteinMatcher(hyp_text)
    best_cer = math.inf
    best_span: tuple[int, int] | None = None
    for start in range(anchor, max_start + 1):
        limit = n - start
        for win_len in range(len_lo, min(len_hi, limit) + 1):
            window_text = " ".join(ref_words[start : start + win_len])
            value = matcher.distance(window_text) / max(1, len(window_text))
            if value < best_cer:
                best_cer = value
                best_span = (start, start + win_len - 1)
        if len_lo > limit:
            # reference tail shorter than the smallest window: try the tail once
            window_text = " ".join(ref_words[start:])
            value = matcher.distance(window_text) / max(1, len(window_text))
            if value < best_cer:
                best_cer = value
                best_span = (start, n - 1)
    assert best_span is not None
    return best_span, best_cer


def align_chapter(
    ref_text: str,
    timed_hyp_words: Sequence[TimedWord],
    profile: LanguageProfile,
    max_dur: float = 20.0,
    gap_break: float = 1.0,
    slack: float = 0.3,
    cer_accept: float = 0.3,
    parent_audio: str = "",
    mode: NormalizationMode | str = NO_PC,
) -> list[Segment]:
    """Chunk timestamped hypotheses and match each chunk to the chapter text.

    Matching is monotonic: each search starts after the previous matched
    span, so spans are ordered and non-overlapping.  Segments whose best
    CER exceeds ``cer_accept`` are flagged ``rejected`` (the anchor still
    advances); chunks left over once the reference is exhausted are
    flagged ``unmatched``.  Matching happens in normalized space and
    ``ref_text`` on each segment is the normalized matched span.
    """
    ref_words = normalize(ref_text, profile, mode).split()
    chunks = chunk_by_timestamps(timed_hyp_words, max_dur=max_dur, gap_break=gap_break, parent_audio=parent_audio)

    segments: list[Segment] = []
    anchor = 0
    for chunk in chunks:
        hyp_norm = normalize(chunk.hyp_text, profile, mode)
        if not hyp_norm:
            segments.append(chunk.flagged(EMPTY_HYPOTHESIS))
            continue
        if anchor >= len(ref_words):
            segments.append(chunk.flagged(UNMATCHED))
            continue
        span, value = match_reference_span(ref_words, hyp_norm, anchor, slack=slack)
        segment = replace(
            chunk,
            hyp_text=hyp_norm,
            ref_text=" ".join(ref_words[span[0] : span[1] + 1]),
            cer=value,
            ref_span=span,
        )
        if value > cer_accept:
            segment = segment.flagged(REJECTED)
        segments.append(segment)
        anchor = span[1] + 1
    return segments


def filter_segments(
    segments: Iterable[Segment],
    min_dur: float = 3.0,
    max_dur: float = 15.0,
    cer_max: float | None = None,
) -> tuple[list[Segment], list[tuple[Segment, str]]]:
    """Keep segments within duration bounds and under the CER ceiling.

    Dropped entries name the violated rule: ``min_dur``, ``max_dur``,
    ``cer_max``, or ``no_ref`` for segments without a matched reference
    when a CER ceiling is requested.
    """
    kept: list[Segment] = []
    dropped: list[tuple[Segment, str]] = []
    for seg in segments:
        if seg.duration < min_dur:
            dropped.append((seg, "min_dur"))
        elif seg.duration > max_dur:
            dropped.append((seg, "max_dur"))
        elif cer_max is not None and seg.cer is None:
            dropped.append((seg, "no_ref"))
        elif cer_max is not None and seg.cer > cer_max:
            dropped.append((seg, "cer_max"))
        else:
            kept.append(seg)
    return kept, dropped


def validate_by_asr(
    records: Sequence[ManifestRecord],
    hypotheses: Sequence[ManifestRecord],
    profile: LanguageProfile,
    cer_threshold: float,
) -> tuple[list[ManifestRecord], list[tuple[ManifestRecord, str]]]:
    """Accept records whose transcript agrees with an ASR hypothesis.

    Hypotheses pair with records by (audio_filepath, offset); the
    comparison uses no-PC normalization on both sides.  Accepted records
    carry the hypothesis in ``pred_text``.  Records without a hypothesis
    are rejected with reason ``no_hypothesis``.
    """
    hyp_by_key: dict[tuple[str, float], str] = {}
    for hyp in hypotheses:
        text = hyp.pred_text if hyp.pred_text is not None else hyp.text
        hyp_by_key[hyp.key] = text
    accepted: list[ManifestRecord] = []
    rejected: list[tuple[ManifestRecord, str]] = []
    for rec in records:
        hyp_text = hyp_by_key.get(rec.key)
        if hyp_text is None:
            rejected.append((rec, "no_hypothesis"))
            continue
        value = cer(normalize(rec.text, profile, NO_PC), normalize(hyp_text, profile, NO_PC))
        if value <= cer_threshold:
            accepted.append(copy_record(rec, pred_text=hyp_text))
        else:
            rejected.append((rec, "cer"))
    return accepted, rejected


def read_timed_words(path: str | Path) -> list[TimedWord]:
    """Read a timed-words file: one JSON object per line with word/start/end."""
    path = Path(path)
    words = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise ManifestError(f"{path}: line {lineno}: malformed record: {exc}") from exc
            for key in ("word", "start", "end"):
                if key not in obj:
                    raise ManifestError(f"{path}: line {lineno}: missing {key}")
            try:
                words.append(TimedWord(word=str(obj["word"]), start=float(obj["start"]), end=float(obj["end"])))
            except (TypeError, ValueError, AlignmentError) as exc:
                raise ManifestError(f"{path}: line {lineno}: {exc}") from None
    validate_timed_words(words)
    return words


def write_timed_words(words: Sequence[TimedWord], path: str | Path) -> None:
    from ._util import atomic_write_text

    lines = [
        json.dumps({"word": w.word, "start": w.start, "end": w.end}, ensure_ascii=False)
        for w in words
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def segment_to_record(seg: Segment, language: str | None = None, source: str | None = None) -> ManifestRecord:
    """Convert a matched segment to a manifest record.

    The matched reference text becomes ``text`` (empty when unmatched),
    the hypothesis goes to ``pred_text``, and ``cer``/``flags`` are kept
    as extra manifest keys.
    """
    extra: dict[str, Any] = {}
    if seg.cer is not None:
        extra["cer"] = seg.cer
    if seg.flags:
        extra["flags"] = list(seg.flags)
    return ManifestRecord(
        audio_filepath=seg.parent_audio or "unknown.wav",
        offset=seg.offset,
        duration=seg.duration,
        text=seg.ref_text or "",
        pred_text=seg.hyp_text,
        language=language,
        source=source,
        extra=extra,
    )
