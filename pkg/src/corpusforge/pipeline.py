"""Declarative, resumable multi-stage pipeline runner.

A pipeline is a YAML document::

    workspace: work          # optional; CORPUSFORGE_WORKSPACE or cwd otherwise
    seed: 17                 # optional; flows into seeded stages
    resume: true             # optional; default true
    stages:
      - name: norm
        kind: normalize
        input: data/raw.manifest
        output: norm.manifest
        params: {lang: hy, mode: no_pc}
      - name: summary
        kind: summarize
        input: "stage:norm"
        output: summary.txt

Stage inputs are either paths (resolved against the config file's
directory) or ``stage:NAME`` taps of an earlier stage's output; outputs
land inside the workspace.  The schema is strict: unknown keys and
unknown stage parameters are validation errors, since silent typos in
stage parameters are the dominant failure mode.

Each stage records a fingerprint (SHA-256 over stage kind, canonicalized
parameters, input content digests, and toolkit version).  With resume
enabled, a stage whose fingerprint matches its completion marker -- and
whose output file still matches the recorded digest -- is skipped.  All
outputs are written atomically, so interrupted runs never leave partial
files, and resumed runs produce byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import yaml

from . import __version__
from ._util import atomic_write_text, file_digest
from .errors import ConfigError, CorpusforgeError, PipelineError
from . import align as align_mod
from . import ipl as ipl_mod
from . import metrics as metrics_mod
from . import stats as stats_mod
from .audio import VadParams, energy_vad, read_wav
from .manifest import (
    ManifestRecord,
    copy_record,
    read_manifest,
    remove_overlap,
    records_to_text,
    summarize,
)
from .textnorm import NormalizationMode, build_profile, normalize

_CONFIG_KEYS = {"workspace", "seed", "resume", "stages"}
_STAGE_KEYS = {"name", "kind", "input", "output", "params"}


@dataclass(frozen=True)
class StageSpec:
    """One pipeline stage: a named transformation with parameters."""

    name: str
    kind: str
    input: str
    output: str
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class PipelineConfig:
    """A validated-on-demand pipeline description."""

    workspace: Path
    stages: list[StageSpec]
    resume: bool = True
    seed: int = 0
    base_dir: Path = field(default_factory=Path.cwd)


def default_workspace() -> Path:
    env = os.environ.get("CORPUSFORGE_WORKSPACE")
    return Path(env) if env else Path.cwd() / "corpusforge-work"


def load_config(path: str | Path, workspace_override: str | Path | None = None) -> PipelineConfig:
    """Parse a pipeline YAML file (strict keys; values validated later)."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path}: expected a mapping at top level")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"config {path}: unknown keys {sorted(unknown)}")
    raw_stages = data.get("stages")
    if not isinstance(raw_stages, list) or not raw_stages:
        raise ConfigError(f"config {path}: 'stages' must be a non-empty list")
    stages = []
    for i, raw in enumerate(raw_stages):
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path}: stage {i}: expected a mapping")
        unknown = set(raw) - _STAGE_KEYS
        if unknown:
            raise ConfigError(f"config {path}: stage {i}: unknown keys {sorted(unknown)}")
        missing = {"name", "kind", "input", "output"} - set(raw)
        if missing:
            raise ConfigError(f"config {path}: stage {i}: missing keys {sorted(missing)}")
        params = raw.get("params") or {}
        if not isinstance(params, dict):
            raise ConfigError(f"config {path}: stage {i}: params must be a mapping")
        stages.append(
            StageSpec(
                name=str(raw["name"]),
                kind=str(raw["kind"]),
                input=str(raw["input"]),
                output=str(raw["output"]),
                params=dict(params),
            )
        )
    if workspace_override is not None:
        workspace = Path(workspace_override)
    elif "workspace" in data:
        workspace = Path(str(data["workspace"]))
        if not workspace.is_absolute():
            workspace = path.parent / workspace
    else:
        workspace = default_workspace()
    return PipelineConfig(
        workspace=workspace,
        stages=stages,
        resume=bool(data.get("resume", True)),
        seed=int(data.get("seed", 0)),
        base_dir=path.parent,
    )


# --------------------------------------------------------------------------
# stage registry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StageDef:
    """Declared surface of a stage kind (for validation and fingerprints)."""

    required: frozenset[str]
    optional: frozenset[str]
    file_params: frozenset[str]  # params whose value is a readable input file
    seeded: bool = False

    @property
    def known(self) -> frozenset[str]:
        return self.required | self.optional


_STAGE_DEFS: dict[str, StageDef] = {
    "normalize": StageDef(frozenset({"lang", "mode"}), frozenset(), frozenset()),
    "dedup_overlap": StageDef(frozenset({"test", "lang"}), frozenset(), frozenset({"test"})),
    "vad_segment": StageDef(
        frozenset({"root"}),
        frozenset({"threshold_db", "frame_ms", "hop_ms", "min_speech_ms", "min_gap_ms", "pad_ms"}),
        frozenset(),
    ),
    "align_chapter": StageDef(
        frozenset({"ref", "lang"}),
        frozenset({"audio", "max_dur", "gap_break", "slack", "cer_accept"}),
        frozenset({"ref"}),
    ),
    "filter": StageDef(frozenset(), frozenset({"min_dur", "max_dur", "cer_max"}), frozenset()),
    "validate_by_asr": StageDef(
        frozenset({"hyps", "lang", "cer_threshold"}), frozenset(), frozenset({"hyps"})
    ),
    "evaluate": StageDef(
        frozenset({"lang", "mode"}), frozenset({"hyps", "dump"}), frozenset({"hyps"})
    ),
    "bootstrap": StageDef(
        frozenset({"b"}),
        frozenset({"replicates", "level", "seed", "label_a", "label_b"}),
        frozenset({"b"}),
        seeded=True,
    ),
    "ipl": StageDef(
        frozenset({"labeled", "adapter", "lang"}),
        frozenset(
            {
                "iterations",
                "min_dur",
                "max_dur",
                "char_rate_min",
                "char_rate_max",
                "agreement_cer_max",
                "relabel_fraction",
                "seed",
            }
        ),
        frozenset({"labeled"}),
        seeded=True,
    ),
    "summarize": StageDef(frozenset(), frozenset(), frozenset()),
}

STAGE_KINDS = sorted(_STAGE_DEFS)


def validate_config(config: PipelineConfig) -> list[str]:
    """Return diagnostics; an empty list means the config is runnable."""
    diagnostics: list[str] = []
    seen_names: set[str] = set()
    seen_outputs: set[str] = set()
    for stage in config.stages:
        where = f"stage {stage.name!r}"
        if stage.name in seen_names:
            diagnostics.append(f"{where}: duplicate stage name")
        seen_names.add(stage.name)
        definition = _STAGE_DEFS.get(stage.kind)
        if definition is None:
            diagnostics.append(
                f"{where}: unknown kind {stage.kind!r}; valid kinds: {', '.join(STAGE_KINDS)}"
            )
            continue
        missing = definition.required - set(stage.params)
        if missing:
            diagnostics.append(f"{where}: missing required params {sorted(missing)}")
        unknown = set(stage.params) - definition.known
        if unknown:
            diagnostics.append(f"{where}: unknown params {sorted(unknown)}")
        if not stage.output:
            diagnostics.append(f"{where}: empty output path")
        if stage.output in seen_outputs:
            diagnostics.append(f"{where}: output {stage.output!r} already produced by an earlier stage")
        seen_outputs.add(stage.output)
        for ref_desc, value in [("input", stage.input)] + [
            (f"param {p!r}", str(stage.params[p]))
            for p in sorted(definition.file_params & set(stage.params))
        ]:
            if value.startswith("stage:"):
                target = value[len("stage:") :]
                producers = [s.name for s in config.stages if s.name == target]
                if target not in {s.name for s in _earlier_stages(config, stage.name)}:
                    if producers:
                        diagnostics.append(
                            f"{where}: {ref_desc} references stage {target!r} which does not run earlier"
                        )
                    else:
                        diagnostics.append(f"{where}: {ref_desc} references undefined stage {target!r}")
            else:
                resolved = _resolve_external(config, value)
                if not resolved.is_file():
                    diagnostics.append(f"{where}: {ref_desc} file not found: {resolved}")
    return diagnostics


def _earlier_stages(config: PipelineConfig, name: str) -> list[StageSpec]:
    out = []
    for stage in config.stages:
        if stage.name == name:
            break
        out.append(stage)
    return out


def _resolve_external(config: PipelineConfig, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else config.base_dir / p


def _resolve_ref(config: PipelineConfig, value: str) -> Path:
    """Resolve a stage input or file param: a stage tap or an external path."""
    if value.startswith("stage:"):
        target = value[len("stage:") :]
        for stage in config.stages:
            if stage.name == target:
                return config.workspace / stage.output
        raise ConfigError(f"reference to undefined stage {target!r}")
    return _resolve_external(config, value)


# --------------------------------------------------------------------------
# stage execution
# --------------------------------------------------------------------------


@dataclass
class StageResult:
    name: str
    kind: str
    status: str  # completed | skipped | failed | not_run
    seconds: float = 0.0
    records_out: int | None = None
    message: str = ""


@dataclass
class RunReport:
    """Per-stage status, timings, and record counts for one pipeline run."""

    stages: list[StageResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(s.status in ("completed", "skipped") for s in self.stages)

    def to_text(self) -> str:
        lines = []
        for s in self.stages:
            count = f" records={s.records_out}" if s.records_out is not None else ""
            msg = f" ({s.message})" if s.message else ""
            lines.append(f"{s.name} [{s.kind}]: {s.status} in {s.seconds:.2f}s{count}{msg}")
        lines.append(f"result: {'ok' if self.ok else 'failed'}")
        return "\n".join(lines) + "\n"


def _canonical_params(stage: StageSpec, config: PipelineConfig, input_paths: dict[str, Path]) -> str:
    payload = {
        "kind": stage.kind,
        "params": {k: stage.params[k] for k in sorted(stage.params)},
        "inputs": {name: file_digest(p) for name, p in sorted(input_paths.items())},
        "seed": config.seed if _STAGE_DEFS[stage.kind].seeded else None,
        "version": __version__,
    }
    return json.dumps(payload, sort_keys=True, ensure_ascii=False)


def stage_fingerprint(stage: StageSpec, config: PipelineConfig) -> str:
    """Digest over (kind, canonical parameters, input digests, version)."""
    definition = _STAGE_DEFS[stage.kind]
    inputs = {"input": _resolve_ref(config, stage.input)}
    for p in sorted(definition.file_params & set(stage.params)):
        inputs[p] = _resolve_ref(config, str(stage.params[p]))
    return hashlib.sha256(_canonical_params(stage, config, inputs).encode("utf-8")).hexdigest()


def _write_records(path: Path, records: Sequence[ManifestRecord]) -> int:
    atomic_write_text(path, records_to_text(records))
    return len(records)


def _stage_normalize(stage: StageSpec, config: PipelineConfig, out: Path) -> int:
    profile = build_profile(str(stage.params["lang"]))
    mode = NormalizationMode.parse(str(stage.params["mode"]))
    records = read_manifest(_resolve_ref(config, stage.input))
    normalized = []
    for rec in records:
        changes: dict[str, Any] = {"text": normalize(rec.text, profile, mode)}
        if rec.pred_text is not None:
            changes["pred_text"] = normalize(rec.pred_text, profile, mode)
        normalized.append(copy_record(rec, **changes))
    return _write_records(out, normalized)


def _stage_dedup_overlap(stage: StageSpec, config: PipelineConfig, out: Path) -> int:
    profile = build_profile(str(stage.params["lang"]))
    train = read_manifest(_resolve_ref(config, stage.input))
    test = read_manifest(_resolve_ref(config, str(stage.params["test"])))
    kept, _removed = remove_overlap(train, test, profile)
    return _write_records(out, kept)


def _stage_vad_segment(stage: StageSpec, config: PipelineConfig, out: Path) -> int:
    root = _resolve_external(config, str(stage.params["root"]))
    params = VadParams(
        frame_ms=float(stage.params.get("frame_ms", 25.0)),
        hop_ms=float(stage.params.get("hop_ms", 10.0)),
        threshold_db=float(stage.params.get("threshold_db", 30.0)),
        min_speech_ms=float(stage.params.get("min_speech_ms", 200.0)),
        min_gap_ms=float(stage.params.get("min_gap_ms", 300.0)),
        pad_ms=float(stage.params.get("pad_ms", 100.0)),
    )
    records = read_manifest(_resolve_ref(config, stage.input))
    spans_out: list[ManifestRecord] = []
    for rec in records:
        buffer = read_wav(root / rec.audio_filepath)
        for span in energy_vad(buffer, params):
            spans_out.append(
                ManifestRecord(
                    audio_filepath=rec.audio_filepath,
                    offset=span.start,
                    duration=span.duration,
                    text="",
                    language=rec.language,
                    source=rec.source,
                )
            )
    return _write_records(out, spans_out)


def _stage_align_chapter(stage: StageSpec, config: PipelineConfig, out: Path) -> int:
    profile = build_profile(str(stage.params["lang"]))
    ref_text = _resolve_ref(config, str(stage.params["ref"])).read_text(encoding="utf-8")
    words = align_mod.read_timed_words(_resolve_ref(config, stage.input))
    segments = align_mod.align_chapter(
        ref_text,
        words,
        profile,
        max_dur=float(stage.params.get("max_dur", 20.0)),
        gap_break=float(stage.params.get("gap_break", 1.0)),
        slack=float(stage.params.get("slack", 0.3)),
        cer_accept=float(stage.params.get("cer_accept", 0.3)),
        parent_audio=str(stage.params.get("audio", "")),
    )
    records = [
        align_mod.segment_to_record(seg, language=str(stage.params["lang"]))
        for seg in segments
    ]
    return _write_records(out, records)


def _stage_filter(stage: StageSpec, config: PipelineConfig, out: Path) -> int:
    min_dur = float(stage.params.get("min_dur", 3.0))
    max_dur = float(stage.params.get("max_dur", 15.0))
    cer_max = stage.params.get("cer_max")
    records = read_manifest(_resolve_ref(config, stage.input))
    kept = []
    for rec in records:
        if rec.duration < min_dur or rec.duration > max_dur:
            continue
        if cer_max is not None:
            value = rec.extra.get("cer")
            if value is None or float(value) > float(cer_max):
                continue
        kept.append(rec)
    return _write_records(out, kept)


def _stage_validate_by_asr(stage: StageSpec, config: PipelineConfig, out: Path) -> int:
    profile = build_profile(str(stage.params["lang"]))
    records = read_manifest(_resolve_ref(config, stage.input))
    hyps = read_manifest(_resolve_ref(config, str(stage.params["hyps"])))
    accepted, _rejected = align_mod.validate_by_asr(
        records, hyps, profile, float(stage.params["cer_threshold"])
    )
    return _write_records(out, accepted)


def _stage_evaluate(stage: StageSpec, config: PipelineConfig, out: Path) -> int | None:
    profile = build_profile(str(stage.params["lang"]))
    mode = NormalizationMode.parse(str(stage.params["mode"]))
    records = read_manifest(_resolve_ref(config, stage.input))
    hyp_records = None
    if "hyps" in stage.params:
        hyp_records = read_manifest(_resolve_ref(config, str(stage.params["hyps"])))
    refs, hyps = metrics_mod.paired_texts(records, hyp_records)
    report = metrics_mod.evaluate(refs, hyps, profile, mode)
    if "dump" in stage.params:
        metrics_mod.dump_per_utterance(report, config.workspace / str(stage.params["dump"]))
    atomic_write_text(out, report.to_text())
    return None


def _stage_bootstrap(stage: StageSpec, config: PipelineConfig, out: Path) -> int | None:
    scores_a = stats_mod.SystemScores.from_per_utterance_file(
        _resolve_ref(config, stage.input), label=str(stage.params.get("label_a", "a"))
    )
    scores_b = stats_mod.SystemScores.from_per_utterance_file(
        _resolve_ref(config, str(stage.params["b"])), label=str(stage.params.get("label_b", "b"))
    )
    report = stats_mod.bootstrap_compare(
        scores_a,
        scores_b,
        B=int(stage.params.get("replicates", 10000)),
        level=float(stage.params.get("level", 0.95)),
        seed=int(stage.params.get("seed", config.seed)),
    )
    atomic_write_text(out, report.to_text())
    return None


def _stage_ipl(stage: StageSpec, config: PipelineConfig, out: Path) -> int:
    profile = build_profile(str(stage.params["lang"]))
    labeled = read_manifest(_resolve_ref(config, str(stage.params["labeled"])))
    unlabeled = read_manifest(_resolve_ref(config, stage.input))
    adapter = ipl_mod.make_adapter(str(stage.params["adapter"]))
    ipl_config = ipl_mod.IplConfig(
        iterations=int(stage.params.get("iterations", 1)),
        min_dur=float(stage.params.get("min_dur", 1.0)),
        max_dur=float(stage.params.get("max_dur", 20.0)),
        char_rate_bounds=(
            float(stage.params.get("char_rate_min", 2.0)),
            float(stage.params.get("char_rate_max", 35.0)),
        ),
        agreement_cer_max=float(stage.params.get("agreement_cer_max", 0.2)),
        relabel_fraction=float(stage.params.get("relabel_fraction", 0.25)),
        seed=int(stage.params.get("seed", config.seed)),
    )
    workdir = config.workspace / f"{stage.name}.ipl"
    manifests, report = ipl_mod.run_ipl(labeled, unlabeled, adapter, ipl_config, profile, workdir=workdir)
    atomic_write_text(config.workspace / f"{stage.name}.ipl-report.txt", report.to_text())
    return _write_records(out, manifests[-1])


def _stage_summarize(stage: StageSpec, config: PipelineConfig, out: Path) -> int | None:
    records = read_manifest(_resolve_ref(config, stage.input))
    atomic_write_text(out, summarize(records).to_text())
    return None


_RUNNERS: dict[str, Callable[[StageSpec, PipelineConfig, Path], int | None]] = {
    "normalize": _stage_normalize,
    "dedup_overlap": _stage_dedup_overlap,
    "vad_segment": _stage_vad_segment,
    "align_chapter": _stage_align_chapter,
    "filter": _stage_filter,
    "validate_by_asr": _stage_validate_by_asr,
    "evaluate": _stage_evaluate,
    "bootstrap": _stage_bootstrap,
    "ipl": _stage_ipl,
    "summarize": _stage_summarize,
}


class _WorkspaceLock:
    """Advisory lock so two pipeline processes never share a workspace."""

    def __init__(self, workspace: Path):
        self.path = workspace / ".corpusforge" / "lock"
        self._acquired = False

    def __enter__(self) -> "_WorkspaceLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            holder = None
            try:
                holder = int(self.path.read_text().strip())
            except (OSError, ValueError):
                pass
            if holder is not None and not _pid_alive(holder):
                # stale lock from a dead process; take it over
                self.path.unlink(missing_ok=True)
                return self.__enter__()
            raise PipelineError(
                f"workspace {self.path.parent.parent} is locked by another corpusforge run"
                + (f" (pid {holder})" if holder is not None else "")
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        self._acquired = True
        return self

    def __exit__(self, *exc_info: object) -> None:
        if self._acquired:
            self.path.unlink(missing_ok=True)


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def run_pipeline(config: PipelineConfig) -> RunReport:
    """Execute stages in order, skipping fingerprint-matched completed ones.

    A stage failure halts the run; completed stage outputs and markers
    are preserved, so a rerun with ``resume`` continues where it stopped.
    Raises :class:`ConfigError` when the config does not validate.
    """
    diagnostics = validate_config(config)
    if diagnostics:
        raise ConfigError("config is not runnable:\n" + "\n".join(f"  {d}" for d in diagnostics))
    config.workspace.mkdir(parents=True, exist_ok=True)
    marker_dir = config.workspace / ".corpusforge" / "done"
    marker_dir.mkdir(parents=True, exist_ok=True)

    report = RunReport()
    with _WorkspaceLock(config.workspace):
        failed = False
        for stage in config.stages:
            result = StageResult(name=stage.name, kind=stage.kind, status="not_run")
            report.stages.append(result)
            if failed:
                continue
            started = time.monotonic()
            try:
                fingerprint = stage_fingerprint(stage, config)
                out_path = config.workspace / stage.output
                marker_path = marker_dir / f"{stage.name}.json"
                if config.resume and marker_path.is_file() and out_path.is_file():
                    marker = json.loads(marker_path.read_text(encoding="utf-8"))
                    if (
                        marker.get("fingerprint") == fingerprint
                        and marker.get("output_digest") == file_digest(out_path)
                    ):
                        result.status = "skipped"
                        result.records_out = marker.get("records_out")
                        result.seconds = time.monotonic() - started
                        continue
                records_out = _RUNNERS[stage.kind](stage, config, out_path)
                marker = {
                    "fingerprint": fingerprint,
                    "output_digest": file_digest(out_path),
                    "records_out": records_out,
                }
                atomic_write_text(marker_path, json.dumps(marker, sort_keys=True))
                result.status = "completed"
                result.records_out = records_out
                result.seconds = time.monotonic() - started
            except Exception as exc:  # a failing stage is reported, not raised
                result.status = "failed"
                result.message = f"{type(exc).__name__}: {exc}" if not isinstance(exc, CorpusforgeError) else str(exc)
                result.seconds = time.monotonic() - started
                failed = True
    return report
