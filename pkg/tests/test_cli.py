import json

import numpy as np
import pytest
import yaml

from corpusforge.audio import AudioBuffer, write_wav
from corpusforge.align import TimedWord, write_timed_words
from corpusforge.cli import main
from corpusforge.manifest import read_manifest, write_manifest
from tests.conftest import make_record


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture
def manifest_path(tmp_path):
    path = tmp_path / "in.manifest"
    write_manifest(
        [
            make_record("a.wav", duration=4.0, text="Some Text Here.", source="mcv"),
            make_record("b.wav", duration=5.0, text="Other Words.", source="crowd"),
        ],
        path,
    )
    return path


class TestManifestCommands:
    def test_summarize(self, manifest_path, capsys):
        assert run_cli("manifest", "summarize", str(manifest_path)) == 0
        out = capsys.readouterr().out
        assert "records: 2" in out
        assert "hours[mcv]" in out

    def test_validate_good(self, tmp_path, capsys):
        write_wav(AudioBuffer(8000, np.zeros(8000 * 2)), tmp_path / "a.wav")
        path = tmp_path / "m.manifest"
        write_manifest([make_record("a.wav", duration=2.0, text="x")], path)
        assert run_cli("manifest", "validate", "--root", str(tmp_path), str(path)) == 0

    def test_validate_problems_exit_1(self, tmp_path, manifest_path):
        assert run_cli("manifest", "validate", "--root", str(tmp_path), str(manifest_path)) == 1

    def test_dedup_overlap(self, tmp_path, manifest_path, capsys):
        test_path = tmp_path / "test.manifest"
        write_manifest([make_record("t.wav", duration=1.0, text="some text here")], test_path)
        out_path = tmp_path / "out.manifest"
        code = run_cli(
            "manifest", "dedup-overlap", "--test", str(test_path), "--lang", "hy",
            str(manifest_path), "-o", str(out_path),
        )
        assert code == 0
        assert len(read_manifest(out_path)) == 1
        assert "removed: 1" in capsys.readouterr().out

    def test_malformed_manifest_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.manifest"
        bad.write_text("{nope\n")
        assert run_cli("manifest", "summarize", str(bad)) == 1
        assert "line 1" in capsys.readouterr().err

    def test_missing_file_exit_2(self, tmp_path):
        assert run_cli("manifest", "summarize", str(tmp_path / "absent.manifest")) == 2


class TestNormalizeCommand:
    def test_normalizes_text_and_pred(self, tmp_path):
        path = tmp_path / "in.manifest"
        write_manifest([make_record("a.wav", duration=1.0, text="Abc, def.", pred_text="Ghi!")], path)
        out = tmp_path / "out.manifest"
        assert run_cli("normalize", "--lang", "hy", "--mode", "no_pc", str(path), "-o", str(out)) == 0
        rec = read_manifest(out)[0]
        assert rec.text == "abc def"
        assert rec.pred_text == "ghi"

    def test_unknown_lang_exit_1(self, manifest_path, tmp_path):
        assert run_cli("normalize", "--lang", "zz", "--mode", "no_pc", str(manifest_path), "-o", str(tmp_path / "o")) == 1

    def test_bad_mode_usage_exit_1(self, manifest_path, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc_info:
            run_cli("normalize", "--lang", "hy", "--mode", "bogus", str(manifest_path), "-o", str(tmp_path / "o"))
        assert exc_info.value.code == 1


class TestAudioCommands:
    def test_vad(self, tmp_path, capsys):
        sr = 16000
        samples = np.zeros(sr * 3)
        t = np.arange(sr) / sr
        samples[sr : 2 * sr] = 0.1 * np.sin(2 * np.pi * 500 * t)
        write_wav(AudioBuffer(sr, samples), tmp_path / "a.wav")
        mpath = tmp_path / "in.manifest"
        write_manifest([make_record("a.wav", duration=3.0)], mpath)
        out = tmp_path / "spans.manifest"
        assert run_cli("vad", "--root", str(tmp_path), str(mpath), "-o", str(out)) == 0
        spans = read_manifest(out)
        assert len(spans) == 1 and spans[0].text == ""

    def test_segment(self, tmp_path, capsys):
        words = [TimedWord(f"w{i}", i * 1.0, i * 1.0 + 0.8) for i in range(40)]
        wpath = tmp_path / "words.jsonl"
        write_timed_words(words, wpath)
        out = tmp_path / "chunks.manifest"
        assert run_cli("segment", str(wpath), "--max-dur", "20", "--audio", "x.wav", "-o", str(out)) == 0
        chunks = read_manifest(out)
        assert len(chunks) == 2
        assert chunks[0].audio_filepath == "x.wav"

    def test_align_chapter(self, tmp_path, capsys):
        chapter = "alpha beta gamma delta epsilon zeta"
        (tmp_path / "ch.txt").write_text(chapter)
        words = []
        t = 0.0
        for w in chapter.split():
            words.append(TimedWord(w, t, t + 0.4))
            t += 0.5
        wpath = tmp_path / "words.jsonl"
        write_timed_words(words, wpath)
        out = tmp_path / "seg.manifest"
        code = run_cli(
            "align-chapter", str(wpath), "--ref", str(tmp_path / "ch.txt"),
            "--lang", "hy", "--audio", "book.wav", "-o", str(out),
        )
        assert code == 0
        segments = read_manifest(out)
        assert " ".join(s.text for s in segments) == chapter


class TestFilterCommand:
    def test_duration_and_cer(self, tmp_path, capsys):
        records = [
            make_record("ok.wav", duration=10.0, extra={"cer": 0.05}),
            make_record("short.wav", duration=1.0, extra={"cer": 0.0}),
            make_record("bad.wav", duration=10.0, extra={"cer": 0.9}),
        ]
        path = tmp_path / "in.manifest"
        write_manifest(records, path)
        out = tmp_path / "out.manifest"
        assert run_cli("filter", str(path), "--cer-max", "0.3", "-o", str(out)) == 0
        kept = read_manifest(out)
        assert [r.audio_filepath for r in kept] == ["ok.wav"]


class TestEvalAndBootstrap:
    def _scored_manifest(self, tmp_path):
        path = tmp_path / "scored.manifest"
        write_manifest(
            [
                make_record("a.wav", duration=1.0, text="a b c", pred_text="a b c"),
                make_record("b.wav", duration=1.0, text="d e f", pred_text="d x f"),
            ],
            path,
        )
        return path

    def test_eval_to_stdout(self, tmp_path, capsys):
        path = self._scored_manifest(tmp_path)
        assert run_cli("eval", "--refs", str(path), "--lang", "hy", "--mode", "no_pc") == 0
        out = capsys.readouterr().out
        assert "wer: 16.6667" in out

    def test_eval_with_separate_hyps_and_dump(self, tmp_path, capsys):
        refs = tmp_path / "refs.manifest"
        write_manifest([make_record("a.wav", duration=1.0, text="a b")], refs)
        hyps = tmp_path / "hyps.manifest"
        write_manifest([make_record("a.wav", duration=1.0, text="", pred_text="a b")], hyps)
        dump = tmp_path / "dump.jsonl"
        report = tmp_path / "report.txt"
        code = run_cli(
            "eval", "--refs", str(refs), "--hyps", str(hyps), "--lang", "hy",
            "--mode", "no_pc", "--per-utterance", str(dump), "-o", str(report),
        )
        assert code == 0
        assert "wer: 0.0000" in report.read_text()
        assert json.loads(dump.read_text().splitlines()[0])["ref_word_count"] == 2

    def test_bootstrap(self, tmp_path, capsys):
        path = self._scored_manifest(tmp_path)
        dump = tmp_path / "dump.jsonl"
        run_cli("eval", "--refs", str(path), "--lang", "hy", "--mode", "no_pc", "--per-utterance", str(dump))
        code = run_cli("bootstrap", "--a", str(dump), "--b", str(dump), "--B", "100", "--seed", "7")
        assert code == 0
        out = capsys.readouterr().out
        assert "poi: 0.5" in out
        assert "seed: 7" in out


class TestIplCommand:
    def test_runs_and_writes_workdir(self, tmp_path, capsys):
        labeled = tmp_path / "lab.manifest"
        unlabeled = tmp_path / "unlab.manifest"
        write_manifest([make_record("l.wav", duration=5.0, text="labeled words here")], labeled)
        write_manifest(
            [make_record(f"u{i}.wav", duration=3.0, text=f"pool text {i}") for i in range(3)],
            unlabeled,
        )
        workdir = tmp_path / "work"
        code = run_cli(
            "ipl", "--labeled", str(labeled), "--unlabeled", str(unlabeled),
            "--adapter", "mock:rate=0.0,seed=1", "--lang", "hy",
            "--iterations", "2", "-o", str(workdir),
        )
        assert code == 0
        assert (workdir / "train_iter2.manifest").is_file()
        assert len(read_manifest(workdir / "train_iter2.manifest")) == 4

    def test_bad_adapter_exit_2(self, tmp_path):
        labeled = tmp_path / "lab.manifest"
        write_manifest([make_record("l.wav", duration=5.0, text="x")], labeled)
        code = run_cli(
            "ipl", "--labeled", str(labeled), "--unlabeled", str(labeled),
            "--adapter", "bogus:x", "--lang", "hy", "-o", str(tmp_path / "w"),
        )
        assert code == 2


class TestRunCommand:
    def _config(self, tmp_path):
        write_manifest(
            [make_record("a.wav", duration=4.0, text="Alpha Beta.", source="mcv")],
            tmp_path / "in.manifest",
        )
        config = {
            "workspace": "ws",
            "stages": [
                {
                    "name": "norm",
                    "kind": "normalize",
                    "input": "in.manifest",
                    "output": "norm.manifest",
                    "params": {"lang": "hy", "mode": "no_pc"},
                },
                {"name": "sum", "kind": "summarize", "input": "stage:norm", "output": "summary.txt"},
            ],
        }
        path = tmp_path / "p.yaml"
        path.write_text(yaml.safe_dump(config))
        return path

    def test_run_ok(self, tmp_path, capsys):
        assert run_cli("run", str(self._config(tmp_path))) == 0
        assert (tmp_path / "ws" / "summary.txt").is_file()
        out = capsys.readouterr().out
        assert "result: ok" in out

    def test_validate_only(self, tmp_path, capsys):
        assert run_cli("run", str(self._config(tmp_path)), "--validate-only") == 0
        assert "config ok" in capsys.readouterr().out

    def test_invalid_config_exit_1(self, tmp_path, capsys):
        path = tmp_path / "p.yaml"
        path.write_text(yaml.safe_dump({"stages": [{"name": "x", "kind": "nope", "input": "a", "output": "b"}]}))
        assert run_cli("run", str(path), "--validate-only") == 1

    def test_failing_stage_exit_2(self, tmp_path):
        write_manifest([make_record("a.wav", duration=4.0, text="x")], tmp_path / "in.manifest")
        config = {
            "workspace": "ws",
            "stages": [
                {
                    "name": "f",
                    "kind": "filter",
                    "input": "in.manifest",
                    "output": "o.manifest",
                    "params": {"min_dur": "bogus"},
                }
            ],
        }
        path = tmp_path / "p.yaml"
        path.write_text(yaml.safe_dump(config))
        assert run_cli("run", str(path)) == 2

    def test_workspace_override(self, tmp_path):
        path = self._config(tmp_path)
        assert run_cli("run", str(path), "--workspace", str(tmp_path / "other")) == 0
        assert (tmp_path / "other" / "summary.txt").is_file()


def test_usage_error_exit_1(capsys):
    with pytest.raises(SystemExit) as exc_info:
        main(["normalize", "--lang", "hy"])  # missing required args
    assert exc_info.value.code == 1
