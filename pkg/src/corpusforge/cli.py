"""corpusforge command-line interface.

Exit codes: 0 success, 1 validation error (bad arguments, malformed
inputs, failed corpus validation), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from . import align as align_mod
from . import ipl as ipl_mod
from . import metrics as metrics_mod
from . import pipeline as pipeline_mod
from . import stats as stats_mod
from .audio import VadParams, energy_vad, read_wav
from .errors import (
    AdapterError,
    ConfigError,
    CorpusforgeError,
    ManifestError,
    MetricsError,
    PipelineError,
    ProfileError,
    StatsError,
)
from .manifest import (
    ManifestRecord,
    copy_record,
    read_manifest,
    remove_overlap,
    summarize,
    validate_corpus,
    write_manifest,
)
from .textnorm import NormalizationMode, build_profile, normalize

_VALIDATION_ERRORS = (ConfigError, ProfileError, ManifestError, MetricsError, StatsError)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the toolkit convention is 1
    def error(self, message: str) -> "None":  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="corpusforge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"corpusforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_manifest = sub.add_parser("manifest", help="validate, summarize, or dedup manifests")
    msub = p_manifest.add_subparsers(dest="manifest_command", required=True)

    p_validate = msub.add_parser("validate", help="check records against audio files")
    p_validate.add_argument("manifest")
    p_validate.add_argument("--root", required=True, help="corpus root holding the audio files")
    p_validate.add_argument("--allow-unlabeled", action="store_true", help="do not flag empty text")

    p_summarize = msub.add_parser("summarize", help="hour accounting per source")
    p_summarize.add_argument("manifest")

    p_dedup = msub.add_parser("dedup-overlap", help="drop train records overlapping a test set")
    p_dedup.add_argument("manifest")
    p_dedup.add_argument("--test", required=True)
    p_dedup.add_argument("--lang", required=True)
    p_dedup.add_argument("-o", "--output", required=True)

    p_norm = sub.add_parser("normalize", help="normalize manifest text fields")
    p_norm.add_argument("manifest")
    p_norm.add_argument("--lang", required=True, help="language code or profile file")
    p_norm.add_argument("--mode", required=True, choices=["with_pc", "no_pc"])
    p_norm.add_argument("-o", "--output", required=True)

    p_vad = sub.add_parser("vad", help="emit one unlabeled record per detected speech span")
    p_vad.add_argument("manifest")
    p_vad.add_argument("--root", default=".", help="corpus root holding the audio files")
    p_vad.add_argument("--threshold-db", type=float, default=30.0)
    p_vad.add_argument("--frame-ms", type=float, default=25.0)
    p_vad.add_argument("--hop-ms", type=float, default=10.0)
    p_vad.add_argument("--min-speech-ms", type=float, default=200.0)
    p_vad.add_argument("--min-gap-ms", type=float, default=300.0)
    p_vad.add_argument("--pad-ms", type=float, default=100.0)
    p_vad.add_argument("-o", "--output", required=True)

    p_segment = sub.add_parser("segment", help="chunk a timed-words file at word boundaries")
    p_segment.add_argument("--words", required=True, help="timed-words file (JSON lines: word, start, end)")
    p_segment.add_argument("--max-dur", type=float, default=20.0)
    p_segment.add_argument("--gap-break", type=float, default=1.0)
    p_segment.add_argument("--audio", default="", help="parent audio path stamped on segments")
    p_segment.add_argument("-o", "--output", required=True)

    p_align = sub.add_parser("align-chapter", help="match hypothesis chunks to a chapter text")
    p_align.add_argument("--words", required=True, help="timed-words file from a transcriber")
    p_align.add_argument("--ref", required=True, help="chapter transcript text file")
    p_align.add_argument("--lang", required=True)
    p_align.add_argument("--audio", default="", help="parent audio path stamped on segments")
    p_align.add_argument("--max-dur", type=float, default=20.0)
    p_align.add_argument("--gap-break", type=float, default=1.0)
    p_align.add_argument("--slack", type=float, default=0.3)
    p_align.add_argument("--cer-accept", type=float, default=0.3)
    p_align.add_argument("-o", "--output", required=True)

    p_filter = sub.add_parser("filter", help="filter segment records by duration and CER")
    p_filter.add_argument("manifest")
    p_filter.add_argument("--min-dur", type=float, default=3.0)
    p_filter.add_argument("--max-dur", type=float, default=15.0)
    p_filter.add_argument("--cer-max", type=float, default=None)
    p_filter.add_argument("-o", "--output", required=True)

    p_eval = sub.add_parser("eval", help="WER/CER/PER over paired manifests")
    p_eval.add_argument("--refs", required=True)
    p_eval.add_argument("--hyps", help="hypothesis manifest; defaults to pred_text in --refs")
    p_eval.add_argument("--lang", required=True)
    p_eval.add_argument("--mode", required=True, choices=["with_pc", "no_pc"])
    p_eval.add_argument("--per-utterance", help="write per-utterance error counts to this file")
    p_eval.add_argument("-o", "--output", help="report file (stdout when omitted)")

    p_boot = sub.add_parser("bootstrap", help="paired bootstrap comparison of two systems")
    p_boot.add_argument("--a", required=True, dest="a", help="per-utterance dump of system A")
    p_boot.add_argument("--b", required=True, dest="b", help="per-utterance dump of system B")
    p_boot.add_argument("--B", type=int, default=10000, dest="replicates")
    p_boot.add_argument("--seed", type=int, default=0)
    p_boot.add_argument("--level", type=float, default=0.95)
    p_boot.add_argument("-o", "--output", help="report file (stdout when omitted)")

    p_ipl = sub.add_parser("ipl", help="iterative pseudo-labeling over an unlabeled pool")
    p_ipl.add_argument("--labeled", required=True)
    p_ipl.add_argument("--unlabeled", required=True)
    p_ipl.add_argument("--adapter", required=True, help="mock:rate=..,seed=.. | manifest:PATH | cmd:TEMPLATE")
    p_ipl.add_argument("--lang", required=True)
    p_ipl.add_argument("--iterations", type=int, default=1)
    p_ipl.add_argument("--seed", type=int, default=0)
    p_ipl.add_argument("--min-dur", type=float, default=1.0)
    p_ipl.add_argument("--max-dur", type=float, default=20.0)
    p_ipl.add_argument("--char-rate-min", type=float, default=2.0)
    p_ipl.add_argument("--char-rate-max", type=float, default=35.0)
    p_ipl.add_argument("--agreement-cer-max", type=float, default=0.2)
    p_ipl.add_argument("--relabel-fraction", type=float, default=0.25)
    p_ipl.add_argument("-o", "--workdir", required=True)

    p_run = sub.add_parser("run", help="run a pipeline config")
    p_run.add_argument("config")
    p_run.add_argument("--workspace", help="override the config/env workspace")
    p_run.add_argument("--no-resume", action="store_true", help="re-run every stage")
    p_run.add_argument("--validate-only", action="store_true", help="check the config and exit")

    return parser


def _cmd_manifest(args: argparse.Namespace) -> int:
    if args.manifest_command == "validate":
        records = read_manifest(args.manifest)
        report = validate_corpus(records, args.root, expect_labeled=not args.allow_unlabeled)
        sys.stdout.write(report.to_text())
        return 0 if report.ok else 1
    if args.manifest_command == "summarize":
        sys.stdout.write(summarize(read_manifest(args.manifest)).to_text())
        return 0
    # dedup-overlap
    profile = build_profile(args.lang)
    train = read_manifest(args.manifest)
    test = read_manifest(args.test)
    kept, removed = remove_overlap(train, test, profile)
    write_manifest(kept, args.output)
    sys.stdout.write(f"kept: {len(kept)}\nremoved: {len(removed)}\n")
    return 0


def _cmd_normalize(args: argparse.Namespace) -> int:
    profile = build_profile(args.lang)
    mode = NormalizationMode.parse(args.mode)
    out = []
    for rec in read_manifest(args.manifest):
        changes = {"text": normalize(rec.text, profile, mode)}
        if rec.pred_text is not None:
            changes["pred_text"] = normalize(rec.pred_text, profile, mode)
        out.append(copy_record(rec, **changes))
    write_manifest(out, args.output)
    return 0


def _cmd_vad(args: argparse.Namespace) -> int:
    params = VadParams(
        frame_ms=args.frame_ms,
        hop_ms=args.hop_ms,
        threshold_db=args.threshold_db,
        min_speech_ms=args.min_speech_ms,
        min_gap_ms=args.min_gap_ms,
        pad_ms=args.pad_ms,
    )
    root = Path(args.root)
    out = []
    for rec in read_manifest(args.manifest):
        buffer = read_wav(root / rec.audio_filepath)
        for span in energy_vad(buffer, params):
            out.append(
                ManifestRecord(
                    audio_filepath=rec.audio_filepath,
                    offset=span.start,
                    duration=span.duration,
                    text="",
                    language=rec.language,
                    source=rec.source,
                )
            )
    write_manifest(out, args.output)
    sys.stdout.write(f"spans: {len(out)}\n")
    return 0


def _cmd_segment(args: argparse.Namespace) -> int:
    words = align_mod.read_timed_words(args.words)
    chunks = align_mod.chunk_by_timestamps(
        words, max_dur=args.max_dur, gap_break=args.gap_break, parent_audio=args.audio
    )
    records = [align_mod.segment_to_record(seg) for seg in chunks]
    write_manifest(records, args.output)
    sys.stdout.write(f"chunks: {len(records)}\n")
    return 0


def _cmd_align_chapter(args: argparse.Namespace) -> int:
    profile = build_profile(args.lang)
    ref_text = Path(args.ref).read_text(encoding="utf-8")
    words = align_mod.read_timed_words(args.words)
    segments = align_mod.align_chapter(
        ref_text,
        words,
        profile,
        max_dur=args.max_dur,
        gap_break=args.gap_break,
        slack=args.slack,
        cer_accept=args.cer_accept,
        parent_audio=args.audio,
    )
    lang = profile.language if len(profile.language) == 2 else None
    records = [align_mod.segment_to_record(seg, language=lang) for seg in segments]
    write_manifest(records, args.output)
    matched = sum(1 for s in segments if s.ref_text is not None)
    sys.stdout.write(f"segments: {len(segments)}\nmatched: {matched}\n")
    return 0


def _cmd_filter(args: argparse.Namespace) -> int:
    records = read_manifest(args.manifest)
    kept = []
    for rec in records:
        if rec.duration < args.min_dur or rec.duration > args.max_dur:
            continue
        if args.cer_max is not None:
            value = rec.extra.get("cer")
            if value is None or float(value) > args.cer_max:
                continue
        kept.append(rec)
    write_manifest(kept, args.output)
    sys.stdout.write(f"kept: {len(kept)}\ndropped: {len(records) - len(kept)}\n")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    profile = build_profile(args.lang)
    records = read_manifest(args.refs)
    hyp_records = read_manifest(args.hyps) if args.hyps else None
    refs, hyps = metrics_mod.paired_texts(records, hyp_records)
    report = metrics_mod.evaluate(refs, hyps, profile, args.mode)
    if args.per_utterance:
        metrics_mod.dump_per_utterance(report, args.per_utterance)
    text = report.to_text()
    if args.output:
        from ._util import atomic_write_text

        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bootstrap(args: argparse.Namespace) -> int:
    scores_a = stats_mod.SystemScores.from_per_utterance_file(args.a, label=args.a)
    scores_b = stats_mod.SystemScores.from_per_utterance_file(args.b, label=args.b)
    report = stats_mod.bootstrap_compare(
        scores_a, scores_b, B=args.replicates, level=args.level, seed=args.seed
    )
    text = report.to_text()
    if args.output:
        from ._util import atomic_write_text

        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_ipl(args: argparse.Namespace) -> int:
    profile = build_profile(args.lang)
    labeled = read_manifest(args.labeled)
    unlabeled = read_manifest(args.unlabeled)
    adapter = ipl_mod.make_adapter(args.adapter)
    config = ipl_mod.IplConfig(
        iterations=args.iterations,
        min_dur=args.min_dur,
        max_dur=args.max_dur,
        char_rate_bounds=(args.char_rate_min, args.char_rate_max),
        agreement_cer_max=args.agreement_cer_max,
        relabel_fraction=args.relabel_fraction,
        seed=args.seed,
    )
    manifests, report = ipl_mod.run_ipl(
        labeled, unlabeled, adapter, config, profile, workdir=args.workdir
    )
    sys.stdout.write(report.to_text())
    sys.stdout.write(f"final manifest: {Path(args.workdir) / f'train_iter{len(manifests)}.manifest'}\n")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = pipeline_mod.load_config(args.config, workspace_override=args.workspace)
    if args.no_resume:
        config.resume = False
    diagnostics = pipeline_mod.validate_config(config)
    if args.validate_only:
        for d in diagnostics:
            sys.stdout.write(d + "\n")
        sys.stdout.write("config ok\n" if not diagnostics else "config not runnable\n")
        return 0 if not diagnostics else 1
    report = pipeline_mod.run_pipeline(config)
    sys.stdout.write(report.to_text())
    return 0 if report.ok else 2


_COMMANDS = {
    "manifest": _cmd_manifest,
    "normalize": _cmd_normalize,
    "vad": _cmd_vad,
    "segment": _cmd_segment,
    "align-chapter": _cmd_align_chapter,
    "filter": _cmd_filter,
    "eval": _cmd_eval,
    "bootstrap": _cmd_bootstrap,
    "ipl": _cmd_ipl,
    "run": _cmd_run,
}


def main(argv: "list[str] | None" = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        sys.stderr.write(f"corpusforge: {exc}\n")
        return 1
    except (PipelineError, AdapterError, CorpusforgeError) as exc:
        sys.stderr.write(f"corpusforge: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"corpusforge: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
