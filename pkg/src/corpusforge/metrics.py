"""WER/CER/PER computation with PC-aware normalization.

All rates are corpus-pooled: error counts and reference counts are summed
over utterances before dividing, matching standard WER practice.

PER definition used throughout this toolkit: the punctuation symbols of
reference and hypothesis are extracted in reading order (see
:func:`corpusforge.textnorm.extract_punctuation`) and PER is 100 times
the edit distance between the two symbol sequences divided by
max(1, total reference punctuation count), pooled corpus-wide.  PER
values are comparable only against this definition.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ._util import atomic_write_text
from .align import edit_distance, levenshtein
from .errors import MetricsError
from .textnorm import (
    WITH_PC,
    LanguageProfile,
    NormalizationMode,
    normalize,
    punctuation_symbols,
)


@dataclass(frozen=True)
class UtteranceErrors:
    """Error counts for one reference/hypothesis pair."""

    ref_word_count: int
    substitutions: int
    deletions: int
    insertions: int
    ref_char_count: int
    char_errors: int
    ref_punct_count: int = 0
    punct_errors: int = 0

    @property
    def word_errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def to_dict(self) -> dict:
        return {
            "ref_word_count": self.ref_word_count,
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "ref_char_count": self.ref_char_count,
            "char_errors": self.char_errors,
            "ref_punct_count": self.ref_punct_count,
            "punct_errors": self.punct_errors,
        }


@dataclass(frozen=True)
class EvalReport:
    """Corpus-pooled WER/CER/PER percentages with per-utterance counts."""

    wer: float
    cer: float
    per: float | None
    mode: NormalizationMode
    per_utterance: tuple[UtteranceErrors, ...]
    utterance_count: int

    def to_text(self) -> str:
        per_line = f"{self.per:.4f}" if self.per is not None else "n/a"
        lines = [
            f"mode: {self.mode.value}",
            f"utterances: {self.utterance_count}",
            f"wer: {self.wer:.4f}",
            f"cer: {self.cer:.4f}",
            f"per: {per_line}",
        ]
        return "\n".join(lines) + "\n"


def _pair_errors(
    ref: str, hyp: str, profile: LanguageProfile, mode: NormalizationMode
) -> UtteranceErrors:
    ref_norm = normalize(ref, profile, mode)
    hyp_norm = normalize(hyp, profile, mode)
    word_alignment = edit_distance(ref_norm.split(), hyp_norm.split())
    if mode is WITH_PC:
        ref_punct = punctuation_symbols(ref_norm, profile)
        hyp_punct = punctuation_symbols(hyp_norm, profile)
        ref_punct_count = len(ref_punct)
        punct_errors = levenshtein(ref_punct, hyp_punct)
    else:
        ref_punct_count = 0
        punct_errors = 0
    return UtteranceErrors(
        ref_word_count=len(ref_norm.split()),
        substitutions=word_alignment.substitutions,
        deletions=word_alignment.deletions,
        insertions=word_alignment.insertions,
        ref_char_count=len(ref_norm),
        char_errors=levenshtein(ref_norm, hyp_norm),
        ref_punct_count=ref_punct_count,
        punct_errors=punct_errors,
    )


def evaluate(
    refs: Sequence[str],
    hyps: Sequence[str],
    profile: LanguageProfile,
    mode: NormalizationMode | str = WITH_PC,
) -> EvalReport:
    """Score paired reference/hypothesis texts.

    Both sides are normalized under (profile, mode).  WER runs over
    whitespace tokens (WITH_PC keeps punctuation attached to words as
    written), CER over characters including single inter-word spaces,
    and PER only in WITH_PC mode.
    """
    mode = NormalizationMode.parse(mode)
    if len(refs) != len(hyps):
        raise MetricsError(f"got {len(refs)} references but {len(hyps)} hypotheses")
    per_utterance = tuple(_pair_errors(r, h, profile, mode) for r, h in zip(refs, hyps))
    total_ref_words = sum(u.ref_word_count for u in per_utterance)
    if total_ref_words == 0:
        raise MetricsError("no reference words")
    total_ref_chars = sum(u.ref_char_count for u in per_utterance)
    wer = 100.0 * sum(u.word_errors for u in per_utterance) / total_ref_words
    cer = 100.0 * sum(u.char_errors for u in per_utterance) / max(1, total_ref_chars)
    if mode is WITH_PC:
        per_value = 100.0 * sum(u.punct_errors for u in per_utterance) / max(
            1, sum(u.ref_punct_count for u in per_utterance)
        )
    else:
        per_value = None
    return EvalReport(
        wer=wer,
        cer=cer,
        per=per_value,
        mode=mode,
        per_utterance=per_utterance,
        utterance_count=len(per_utterance),
    )


def paired_texts(records, hyp_records=None) -> tuple[list[str], list[str]]:
    """Extract (refs, hyps) from manifest records.

    With ``hyp_records`` the hypothesis for each record is looked up by
    (audio_filepath, offset) -- ``pred_text`` falling back to ``text`` --
    and a missing pairing is an error.  Without it, each record's own
    ``pred_text`` is the hypothesis (empty string when absent).
    """
    refs = [rec.text for rec in records]
    if hyp_records is None:
        hyps = [rec.pred_text if rec.pred_text is not None else "" for rec in records]
    else:
        table = {
            rec.key: (rec.pred_text if rec.pred_text is not None else rec.text)
            for rec in hyp_records
        }
        missing = [rec.audio_filepath for rec in records if rec.key not in table]
        if missing:
            raise MetricsError(f"hypotheses missing for {len(missing)} records (first: {missing[0]})")
        hyps = [table[rec.key] for rec in records]
    return refs, hyps


def per(refs: Sequence[str], hyps: Sequence[str], profile: LanguageProfile) -> float:
    """Corpus-pooled punctuation error rate (WITH_PC normalization)."""
    if len(refs) != len(hyps):
        raise MetricsError(f"got {len(refs)} references but {len(hyps)} hypotheses")
    total_errors = 0
    total_ref = 0
    for ref, hyp in zip(refs, hyps):
        ref_punct = punctuation_symbols(normalize(ref, profile, WITH_PC), profile)
        hyp_punct = punctuation_symbols(normalize(hyp, profile, WITH_PC), profile)
        total_errors += levenshtein(ref_punct, hyp_punct)
        total_ref += len(ref_punct)
    return 100.0 * total_errors / max(1, total_ref)


def relative_improvement(baseline: float, new: float) -> int:
    """Relative change in percent, rounded half away from zero.

    Matches the convention of result tables that print e.g. a move from
    13.41 to 10.83 as -19%.
    """
    if baseline <= 0:
        raise MetricsError(f"baseline must be positive, got {baseline}")
    ratio = (new - baseline) / baseline * 100.0
    return int(math.copysign(math.floor(abs(ratio) + 0.5), ratio))


def dump_per_utterance(report: EvalReport, path: str | Path) -> None:
    """Write per-utterance error counts as one JSON object per line."""
    lines = [json.dumps(u.to_dict(), ensure_ascii=False) for u in report.per_utterance]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def load_per_utterance(path: str | Path) -> list[UtteranceErrors]:
    """Read a per-utterance dump written by :func:`dump_per_utterance`."""
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rows.append(UtteranceErrors(**obj))
            except (ValueError, TypeError) as exc:
                raise MetricsError(f"{path}: line {lineno}: {exc}") from None
    return rows
