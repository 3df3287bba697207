"""Utterance-record data model with line-oriented persistence.

A manifest is a UTF-8 text file with one JSON object per line.  Canonical
key order is ``audio_filepath``, ``offset`` (omitted when 0), ``duration``,
``text``, ``pred_text``, ``language``, ``source``; unknown keys are
preserved on round-trip and serialized after the canonical keys in sorted
order.  Audio paths are stored relative to a corpus root supplied at use
time, keeping manifests relocatable.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

from ._util import atomic_write_text
from .errors import ManifestError
from .textnorm import NO_PC, LanguageProfile, normalize

_CANONICAL_KEYS = ("audio_filepath", "offset", "duration", "text", "pred_text", "language", "source")

#: Stored duration may differ from decoded duration by container/resampling
#: jitter; anything above this is a real labeling error.
DURATION_TOLERANCE_S = 0.1


@dataclass
class ManifestRecord:
    """One utterance: audio reference, time span, text, provenance."""

    audio_filepath: str
    duration: float
    text: str = ""
    offset: float = 0.0
    pred_text: str | None = None
    language: str | None = None
    source: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)
    lineno: int | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        try:
            self.duration = float(self.duration)
        except (TypeError, ValueError):
            raise ManifestError(f"duration must be a number, got {self.duration!r}") from None
        try:
            self.offset = float(self.offset)
        except (TypeError, ValueError):
            raise ManifestError(f"offset must be a number, got {self.offset!r}") from None
        self.validate()

    def validate(self) -> None:
        """Re-check record invariants; raises :class:`ManifestError`."""
        if not isinstance(self.audio_filepath, str) or not self.audio_filepath:
            raise ManifestError("audio_filepath must be a non-empty string")
        if Path(self.audio_filepath).is_absolute():
            raise ManifestError(f"audio_filepath must be relative, got {self.audio_filepath!r}")
        if not self.duration > 0:
            raise ManifestError(f"duration must be > 0, got {self.duration}")
        if self.offset < 0:
            raise ManifestError(f"offset must be >= 0, got {self.offset}")
        if self.language is not None and len(self.language) != 2:
            raise ManifestError(f"language must be a 2-letter code, got {self.language!r}")

    @property
    def key(self) -> tuple[str, float]:
        """Identity used to pair records across manifests."""
        return (self.audio_filepath, self.offset)

    @property
    def end(self) -> float:
        return self.offset + self.duration

    def to_json(self) -> str:
        """Serialize to the canonical single-line JSON form."""
        obj: dict[str, Any] = {"audio_filepath": self.audio_filepath}
        if self.offset != 0:
            obj["offset"] = self.offset
        obj["duration"] = self.duration
        obj["text"] = self.text
        if self.pred_text is not None:
            obj["pred_text"] = self.pred_text
        if self.language is not None:
            obj["language"] = self.language
        if self.source is not None:
            obj["source"] = self.source
        for k in sorted(self.extra):
            obj[k] = self.extra[k]
        return json.dumps(obj, ensure_ascii=False)

    @classmethod
    def from_dict(cls, obj: dict[str, Any], lineno: int | None = None) -> "ManifestRecord":
        for required in ("audio_filepath", "duration"):
            if required not in obj:
                raise ManifestError(f"missing {required}")
        if "text" not in obj:
            raise ManifestError("missing text")
        extra = {k: v for k, v in obj.items() if k not in _CANONICAL_KEYS}
        return cls(
            audio_filepath=obj["audio_filepath"],
            duration=obj["duration"],
            text=obj["text"],
            offset=obj.get("offset", 0.0),
            pred_text=obj.get("pred_text"),
            language=obj.get("language"),
            source=obj.get("source"),
            extra=extra,
            lineno=lineno,
        )


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    """Read a manifest file; errors cite the offending line number."""
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise ManifestError(f"{path}: line {lineno}: malformed record: {exc}") from exc
            if not isinstance(obj, dict):
                raise ManifestError(f"{path}: line {lineno}: expected a JSON object")
            try:
                records.append(ManifestRecord.from_dict(obj, lineno=lineno))
            except ManifestError as exc:
                raise ManifestError(f"{path}: line {lineno}: {exc}") from None
    return records


def records_to_text(records: Iterable[ManifestRecord]) -> str:
    """Canonical manifest text for a record sequence."""
    lines = []
    for index, rec in enumerate(records):
        try:
            rec.validate()
            lines.append(rec.to_json())
        except ManifestError as exc:
            raise ManifestError(f"record {index}: {exc}") from None
    return "".join(line + "\n" for line in lines)


def write_manifest(records: Sequence[ManifestRecord], path: str | Path) -> None:
    """Write records as a canonical manifest file (atomically)."""
    atomic_write_text(path, records_to_text(records))


@dataclass
class ValidationReport:
    """Exhaustive list of corpus problems found by :func:`validate_corpus`."""

    missing: list[tuple[ManifestRecord, str]] = field(default_factory=list)
    duration_mismatch: list[tuple[ManifestRecord, str]] = field(default_factory=list)
    empty_text: list[tuple[ManifestRecord, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.missing or self.duration_mismatch or self.empty_text)

    def to_text(self) -> str:
        lines = []
        for title, entries in (
            ("missing", self.missing),
            ("duration_mismatch", self.duration_mismatch),
            ("empty_text", self.empty_text),
        ):
            lines.append(f"{title}: {len(entries)}")
            for rec, detail in entries:
                where = f" (line {rec.lineno})" if rec.lineno is not None else ""
                lines.append(f"  {rec.audio_filepath}{where}: {detail}")
        lines.append(f"status: {'ok' if self.ok else 'problems found'}")
        return "\n".join(lines) + "\n"


def _decoded_duration(path: Path) -> float:
    with wave.open(str(path), "rb") as wf:
        rate = wf.getframerate()
        if rate <= 0:
            raise wave.Error("bad frame rate")
        return wf.getnframes() / rate


def validate_corpus(
    records: Sequence[ManifestRecord],
    audio_root: str | Path,
    tolerance_s: float = DURATION_TOLERANCE_S,
    expect_labeled: bool = True,
) -> ValidationReport:
    """Check records against the audio files under ``audio_root``.

    Flags records whose audio file is missing, whose stored duration
    disagrees with the decoded duration (whole-file records, ``offset`` 0)
    or whose span runs past the end of the file (``offset`` > 0), and --
    when ``expect_labeled`` -- records with empty text.
    """
    root = Path(audio_root)
    if not root.is_dir():
        raise ManifestError(f"audio root {root} is not a readable directory")
    report = ValidationReport()
    durations: dict[str, float | None] = {}
    for rec in records:
        audio_path = root / rec.audio_filepath
        if not audio_path.is_file():
            report.missing.append((rec, "file not found"))
        else:
            if rec.audio_filepath not in durations:
                try:
                    durations[rec.audio_filepath] = _decoded_duration(audio_path)
                except (wave.Error, EOFError, OSError) as exc:
                    durations[rec.audio_filepath] = None
                    report.duration_mismatch.append((rec, f"could not decode: {exc}"))
                    decoded = None
                else:
                    decoded = durations[rec.audio_filepath]
            else:
                decoded = durations[rec.audio_filepath]
            if decoded is not None:
                if rec.offset == 0:
                    if abs(rec.duration - decoded) > tolerance_s:
                        report.duration_mismatch.append(
                            (rec, f"stored {rec.duration:.3f}s vs decoded {decoded:.3f}s")
                        )
                elif rec.end > decoded + tolerance_s:
                    report.duration_mismatch.append(
                        (rec, f"span ends at {rec.end:.3f}s but file is {decoded:.3f}s")
                    )
        if expect_labeled and not rec.text:
            report.empty_text.append((rec, "empty text"))
    return report


def remove_overlap(
    train: Sequence[ManifestRecord],
    test: Sequence[ManifestRecord],
    profile: LanguageProfile,
) -> tuple[list[ManifestRecord], list[tuple[ManifestRecord, int]]]:
    """Drop train records whose normalized no-PC text appears in the test set.

    Returns ``(kept, removed)`` where each removed entry carries the index
    of the matching test record.  Duplicates within the train set are kept;
    only test-set leakage is targeted.
    """
    test_texts: dict[str, int] = {}
    for idx, rec in enumerate(test):
        norm = normalize(rec.text, profile, NO_PC)
        test_texts.setdefault(norm, idx)
    kept: list[ManifestRecord] = []
    removed: list[tuple[ManifestRecord, int]] = []
    for rec in train:
        norm = normalize(rec.text, profile, NO_PC)
        if norm in test_texts:
            removed.append((rec, test_texts[norm]))
        else:
            kept.append(rec)
    return kept, removed


@dataclass
class CorpusSummary:
    """Corpus accounting: record count, hours overall and per source."""

    record_count: int
    total_hours: float
    per_source_hours: dict[str, float]
    mean_chars_per_second: float

    def to_text(self) -> str:
        lines = [
            f"records: {self.record_count}",
            f"total_hours: {self.total_hours:.4f}",
        ]
        for source in sorted(self.per_source_hours):
            lines.append(f"hours[{source}]: {self.per_source_hours[source]:.4f}")
        lines.append(f"mean_chars_per_second: {self.mean_chars_per_second:.4f}")
        return "\n".join(lines) + "\n"


#: Source key used in summaries for records without a source tag.
UNTAGGED_SOURCE = "untagged"


def summarize(records: Sequence[ManifestRecord]) -> CorpusSummary:
    """Hour accounting over a record sequence, grouped by source tag.

    ``mean_chars_per_second`` is pooled over labeled records: total text
    characters divided by total labeled duration.
    """
    per_source_seconds: dict[str, float] = {}
    labeled_chars = 0
    labeled_seconds = 0.0
    for rec in records:
        source = rec.source if rec.source is not None else UNTAGGED_SOURCE
        per_source_seconds[source] = per_source_seconds.get(source, 0.0) + rec.duration
        if rec.text:
            labeled_chars += len(rec.text)
            labeled_seconds += rec.duration
    total_seconds = sum(rec.duration for rec in records)
    return CorpusSummary(
        record_count=len(records),
        total_hours=total_seconds / 3600.0,
        per_source_hours={s: sec / 3600.0 for s, sec in per_source_seconds.items()},
        mean_chars_per_second=(labeled_chars / labeled_seconds) if labeled_seconds > 0 else 0.0,
    )


def records_by_key(records: Iterable[ManifestRecord]) -> dict[tuple[str, float], ManifestRecord]:
    """Index records by (audio_filepath, offset); later duplicates win."""
    return {rec.key: rec for rec in records}


def copy_record(rec: ManifestRecord, **changes: Any) -> ManifestRecord:
    """Copy a record with field changes (extra dict is shallow-copied)."""
    if "extra" not in changes:
        changes["extra"] = dict(rec.extra)
    return replace(rec, **changes)
