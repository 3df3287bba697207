"""Iterative pseudo-labeling over an unlabeled pool.

A pluggable transcriber adapter produces hypotheses; rule-based filters
keep only plausible ones (duration bounds, character-rate bounds, and
agreement between consecutive-iteration hypotheses as an adapter-agnostic
confidence proxy).  Kept pseudo-labels are promoted to training text with
source tag ``pseudo`` so downstream mixing ratios stay computable.

Adapter contract (external commands): the command is invoked with an
input manifest path and an output manifest path, must write ``pred_text``
for every input record, and signals failure with a nonzero exit.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .align import cer
from .errors import AdapterError, ManifestError
from .manifest import ManifestRecord, copy_record, read_manifest, write_manifest
from .textnorm import NO_PC, LanguageProfile, normalize

PSEUDO_SOURCE = "pseudo"


class TranscriberAdapter:
    """Base transcriber: deterministic hypotheses for manifest records."""

    kind: str = "abstract"

    def __init__(self, version_tag: str):
        self.version_tag = version_tag

    def hypotheses(self, records: Sequence[ManifestRecord]) -> list[str | None]:
        """One hypothesis per record; None when unavailable."""
        raise NotImplementedError


class MockCorruptorAdapter(TranscriberAdapter):
    """Corrupts each record's own text at a per-character rate.

    Deterministic per (version_tag, seed, record identity, text): useful
    for tests and dry runs.  Rate 0 reproduces the text exactly.
    """

    kind = "mock_corruptor"

    def __init__(self, rate: float = 0.0, seed: int = 0, version_tag: str = "mock-1"):
        super().__init__(version_tag)
        if not 0.0 <= rate <= 1.0:
            raise AdapterError(f"corruption rate must lie in [0, 1], got {rate}")
        self.rate = rate
        self.seed = seed

    def _record_rng(self, rec: ManifestRecord) -> np.random.Generator:
        ident = f"{self.version_tag}\x00{self.seed}\x00{rec.audio_filepath}\x00{rec.offset!r}\x00{rec.text}"
        digest = hashlib.sha256(ident.encode("utf-8")).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    def hypotheses(self, records: Sequence[ManifestRecord]) -> list[str | None]:
        return [self._corrupt(rec) for rec in records]

    def _corrupt(self, rec: ManifestRecord) -> str:
        text = rec.text
        if self.rate == 0.0 or not text:
            return text
        rng = self._record_rng(rec)
        letters = sorted(set(text) - {" "}) or ["a"]
        out = []
        for ch in text:
            if rng.random() >= self.rate:
                out.append(ch)
                continue
            action = rng.integers(0, 3)
            if action == 0:  # substitute
                out.append(str(letters[rng.integers(0, len(letters))]))
            elif action == 1:  # delete
                pass
            else:  # insert before
                out.append(str(letters[rng.integers(0, len(letters))]))
                out.append(ch)
        return "".join(out)


class PrecomputedManifestAdapter(TranscriberAdapter):
    """Looks hypotheses up in an existing manifest by (audio_filepath, offset)."""

    kind = "precomputed_manifest"

    def __init__(self, manifest_path: str | Path, version_tag: str | None = None):
        path = Path(manifest_path)
        super().__init__(version_tag or f"precomputed:{path.name}")
        self.manifest_path = path
        self._table: dict[tuple[str, float], str] = {}
        for rec in read_manifest(path):
            hyp = rec.pred_text if rec.pred_text is not None else rec.text
            self._table[rec.key] = hyp

    def hypotheses(self, records: Sequence[ManifestRecord]) -> list[str | None]:
        return [self._table.get(rec.key) for rec in records]


class ExternalCommandAdapter(TranscriberAdapter):
    """Runs an external transcriber command over a temp manifest.

    The command template may reference ``{input}`` and ``{output}``; when
    absent, both paths are appended as positional arguments.
    """

    kind = "external_command"

    def __init__(self, command_template: str, version_tag: str | None = None, timeout_s: float | None = None):
        super().__init__(version_tag or f"cmd:{command_template}")
        self.command_template = command_template
        self.timeout_s = timeout_s

    def hypotheses(self, records: Sequence[ManifestRecord]) -> list[str | None]:
        with tempfile.TemporaryDirectory(prefix="corpusforge-adapter-") as tmp:
            in_path = Path(tmp) / "input.manifest"
            out_path = Path(tmp) / "output.manifest"
            write_manifest(list(records), in_path)
            tokens = [
                t.format(input=str(in_path), output=str(out_path))
                for t in shlex.split(self.command_template)
            ]
            if not any("{input}" in t or "{output}" in t for t in shlex.split(self.command_template)):
                tokens += [str(in_path), str(out_path)]
            try:
                proc = subprocess.run(tokens, capture_output=True, text=True, timeout=self.timeout_s)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise AdapterError(f"transcriber command failed to run: {exc}") from exc
            if proc.returncode != 0:
                tail = (proc.stderr or proc.stdout or "").strip()[-2000:]
                raise AdapterError(
                    f"transcriber command exited with {proc.returncode}: {tail}"
                )
            if not out_path.is_file():
                raise AdapterError("transcriber command wrote no output manifest")
            try:
                produced = read_manifest(out_path)
            except ManifestError as exc:
                raise AdapterError(f"transcriber output unreadable: {exc}") from exc
        table = {rec.key: rec.pred_text for rec in produced}
        return [table.get(rec.key) for rec in records]


def make_adapter(spec: str) -> TranscriberAdapter:
    """Build an adapter from a CLI-style spec string.

    Forms: ``mock:rate=0.1,seed=7[,tag=NAME]``, ``manifest:PATH``,
    ``cmd:TEMPLATE``.
    """
    if ":" not in spec:
        raise AdapterError(f"bad adapter spec {spec!r}; expected kind:... (mock, manifest, cmd)")
    kind, _, rest = spec.partition(":")
    if kind == "mock":
        params = {}
        if rest:
            for item in rest.split(","):
                if "=" not in item:
                    raise AdapterError(f"bad mock adapter parameter {item!r}")
                key, _, value = item.partition("=")
                params[key.strip()] = value.strip()
        unknown = set(params) - {"rate", "seed", "tag"}
        if unknown:
            raise AdapterError(f"unknown mock adapter parameters {sorted(unknown)}")
        try:
            return MockCorruptorAdapter(
                rate=float(params.get("rate", 0.0)),
                seed=int(params.get("seed", 0)),
                version_tag=params.get("tag", "mock-1"),
            )
        except ValueError as exc:
            raise AdapterError(f"bad mock adapter parameters: {exc}") from None
    if kind == "manifest":
        return PrecomputedManifestAdapter(rest)
    if kind == "cmd":
        if not rest:
            raise AdapterError("cmd adapter needs a command template")
        return ExternalCommandAdapter(rest)
    raise AdapterError(f"unknown adapter kind {kind!r}; expected mock, manifest, or cmd")


def transcribe(adapter: TranscriberAdapter, records: Sequence[ManifestRecord]) -> list[ManifestRecord]:
    """Fill ``pred_text`` on every record via the adapter.

    Records the adapter version under the ``pred_version`` manifest key.
    Records the adapter could not transcribe keep ``pred_text`` None and
    gain ``transcribe_error`` so they are visible rather than dropped.
    """
    hyps = adapter.hypotheses(records)
    if len(hyps) != len(records):
        raise AdapterError(
            f"adapter returned {len(hyps)} hypotheses for {len(records)} records"
        )
    out = []
    for rec, hyp in zip(records, hyps):
        extra = dict(rec.extra)
        extra["pred_version"] = adapter.version_tag
        if hyp is None:
            extra["transcribe_error"] = "missing_hypothesis"
            out.append(copy_record(rec, pred_text=None, extra=extra))
        else:
            extra.pop("transcribe_error", None)
            out.append(copy_record(rec, pred_text=hyp, extra=extra))
    return out


@dataclass(frozen=True)
class IplConfig:
    """Thresholds and schedule for the pseudo-labeling loop."""

    iterations: int = 1
    min_dur: float = 1.0
    max_dur: float = 20.0
    char_rate_bounds: tuple[float, float] = (2.0, 35.0)
    agreement_cer_max: float = 0.2
    relabel_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.min_dur < self.max_dur:
            raise ValueError("need 0 < min_dur < max_dur")
        lo, hi = self.char_rate_bounds
        if not 0 <= lo < hi:
            raise ValueError("char_rate_bounds must satisfy 0 <= min < max")
        if not 0 < self.relabel_fraction <= 1:
            raise ValueError("relabel_fraction must lie in (0, 1]")


def filter_pseudo(
    current: Sequence[ManifestRecord],
    previous: "dict[tuple[str, float], str] | Sequence[ManifestRecord] | None",
    config: IplConfig,
    profile: LanguageProfile,
) -> tuple[list[ManifestRecord], list[tuple[ManifestRecord, str]]]:
    """Rule-based pseudo-label filtering.

    Keeps records satisfying the duration bounds, the character-rate
    bounds on the no-PC normalized hypothesis, and -- when a prior
    hypothesis is available -- CER agreement with it.  Drop reasons:
    ``no_hypothesis``, ``min_dur``, ``max_dur``, ``char_rate``,
    ``agreement``.
    """
    if previous is None:
        prev_table: dict[tuple[str, float], str] = {}
    elif isinstance(previous, dict):
        prev_table = previous
    else:
        prev_table = {rec.key: rec.pred_text or "" for rec in previous if rec.pred_text is not None}
    rate_lo, rate_hi = config.char_rate_bounds
    kept: list[ManifestRecord] = []
    dropped: list[tuple[ManifestRecord, str]] = []
    for rec in current:
        if rec.pred_text is None:
            dropped.append((rec, "no_hypothesis"))
            continue
        if rec.duration < config.min_dur:
            dropped.append((rec, "min_dur"))
            continue
        if rec.duration > config.max_dur:
            dropped.append((rec, "max_dur"))
            continue
        hyp_norm = normalize(rec.pred_text, profile, NO_PC)
        char_rate = len(hyp_norm) / rec.duration
        if not rate_lo <= char_rate <= rate_hi:
            dropped.append((rec, "char_rate"))
            continue
        prev_hyp = prev_table.get(rec.key)
        if prev_hyp is not None:
            agreement = cer(normalize(prev_hyp, profile, NO_PC), hyp_norm)
            if agreement > config.agreement_cer_max:
                dropped.append((rec, "agreement"))
                continue
        kept.append(rec)
    return kept, dropped


@dataclass(frozen=True)
class IterationStats:
    """Pool accounting for one pseudo-labeling iteration."""

    iteration: int
    transcribed: int
    labeled_count: int
    labeled_hours: float
    pseudo_kept_count: int
    pseudo_kept_hours: float
    dropped_by_reason: dict[str, int]
    labeled_to_pseudo_ratio: float | None

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped_by_reason.values())


@dataclass(frozen=True)
class IplReport:
    """Per-iteration pool sizes and the labeled-to-pseudo hour ratio."""

    iterations: tuple[IterationStats, ...]

    def to_text(self) -> str:
        lines = []
        for it in self.iterations:
            ratio = f"{it.labeled_to_pseudo_ratio:.4f}" if it.labeled_to_pseudo_ratio is not None else "n/a"
            dropped = ", ".join(f"{k}={v}" for k, v in sorted(it.dropped_by_reason.items())) or "none"
            lines.extend(
                [
                    f"iteration {it.iteration}:",
                    f"  transcribed: {it.transcribed}",
                    f"  labeled: {it.labeled_count} ({it.labeled_hours:.4f} h)",
                    f"  pseudo kept: {it.pseudo_kept_count} ({it.pseudo_kept_hours:.4f} h)",
                    f"  pseudo dropped: {dropped}",
                    f"  labeled/pseudo hour ratio: {ratio}",
                ]
            )
        return "\n".join(lines) + "\n"


def _promote(rec: ManifestRecord, hypothesis: str) -> ManifestRecord:
    return copy_record(rec, text=hypothesis, pred_text=hypothesis, source=PSEUDO_SOURCE)


def run_ipl(
    labeled: Sequence[ManifestRecord],
    unlabeled: Sequence[ManifestRecord],
    adapter: TranscriberAdapter,
    config: IplConfig,
    profile: LanguageProfile,
    workdir: str | Path | None = None,
) -> tuple[list[list[ManifestRecord]], IplReport]:
    """Run the pseudo-labeling loop.

    Iteration ``i`` transcribes every never-transcribed record plus a
    seeded ``relabel_fraction`` sample of the already-transcribed cache,
    filters the fresh hypotheses (agreement checked against each record's
    previous hypothesis), and emits training manifest ``i`` as labeled
    records plus all currently-kept pseudo records (hypothesis promoted
    to ``text``, source ``pseudo``).  Deterministic given inputs, seed,
    and adapter version tag.

    With ``workdir`` set, each iteration writes ``train_iter{i}.manifest``
    and a resumable ``ipl_state.json`` checkpoint; a rerun pointing at the
    same workdir continues after the last completed iteration.
    """
    if not labeled:
        raise ValueError("labeled set must be non-empty")
    order = {rec.key: i for i, rec in enumerate(unlabeled)}
    if len(order) != len(unlabeled):
        raise ManifestError("unlabeled records must have unique (audio_filepath, offset) keys")

    hyp_cache: dict[tuple[str, float], str] = {}
    kept_keys: set[tuple[str, float]] = set()
    stats: list[IterationStats] = []
    manifests: list[list[ManifestRecord]] = []
    start_iteration = 1

    state_path = None
    if workdir is not None:
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        state_path = workdir / "ipl_state.json"
        if state_path.is_file():
            state = json.loads(state_path.read_text(encoding="utf-8"))
            if state.get("adapter_version") == adapter.version_tag and state.get("seed") == config.seed:
                hyp_cache = {(k[0], float(k[1])): v for k, v in state["hyp_cache"]}
                kept_keys = {(k[0], float(k[1])) for k in state["kept_keys"]}
                start_iteration = state["next_iteration"]
                for i in range(1, start_iteration):
                    manifests.append(read_manifest(workdir / f"train_iter{i}.manifest"))

    by_key = {rec.key: rec for rec in unlabeled}
    for iteration in range(start_iteration, config.iterations + 1):
        never = [rec for rec in unlabeled if rec.key not in hyp_cache]
        cached_keys = sorted(hyp_cache, key=lambda k: order[k])
        rng = np.random.default_rng((config.seed, iteration))
        sample_size = int(round(config.relabel_fraction * len(cached_keys)))
        if cached_keys and sample_size:
            picks = rng.choice(len(cached_keys), size=sample_size, replace=False)
            resample = [by_key[cached_keys[i]] for i in sorted(picks)]
        else:
            resample = []
        to_transcribe = never + resample

        transcribed = transcribe(adapter, to_transcribe)
        previous = {k: hyp_cache[k] for k in (rec.key for rec in resample)}
        kept, dropped = filter_pseudo(transcribed, previous, config, profile)

        for rec in transcribed:
            if rec.pred_text is not None:
                hyp_cache[rec.key] = rec.pred_text
        kept_keys |= {rec.key for rec in kept}
        kept_keys -= {rec.key for rec, _ in dropped}

        pseudo_records = [
            _promote(by_key[key], hyp_cache[key])
            for key in sorted(kept_keys, key=lambda k: order[k])
        ]
        training = list(labeled) + pseudo_records
        manifests.append(training)

        labeled_hours = sum(rec.duration for rec in labeled) / 3600.0
        pseudo_hours = sum(rec.duration for rec in pseudo_records) / 3600.0
        reasons: dict[str, int] = {}
        for _, reason in dropped:
            reasons[reason] = reasons.get(reason, 0) + 1
        stats.append(
            IterationStats(
                iteration=iteration,
                transcribed=len(transcribed),
                labeled_count=len(labeled),
                labeled_hours=labeled_hours,
                pseudo_kept_count=len(pseudo_records),
                pseudo_kept_hours=pseudo_hours,
                dropped_by_reason=reasons,
                labeled_to_pseudo_ratio=(labeled_hours / pseudo_hours) if pseudo_hours > 0 else None,
            )
        )

        if workdir is not None and state_path is not None:
            write_manifest(training, workdir / f"train_iter{iteration}.manifest")
            state = {
                "adapter_version": adapter.version_tag,
                "seed": config.seed,
                "next_iteration": iteration + 1,
                "hyp_cache": [[list(k), v] for k, v in sorted(hyp_cache.items(), key=lambda kv: order[kv[0]])],
                "kept_keys": [list(k) for k in sorted(kept_keys, key=lambda k: order[k])],
            }
            from ._util import atomic_write_text

            atomic_write_text(state_path, json.dumps(state, ensure_ascii=False, indent=1))

    return manifests, IplReport(iterations=tuple(stats))
