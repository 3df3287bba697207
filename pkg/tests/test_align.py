import functools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corpusforge.align import (
    EMPTY_HYPOTHESIS,
    OVER_LENGTH,
    REJECTED,
    UNMATCHED,
    EditOpKind,
    LevenshteinMatcher,
    Segment,
    TimedWord,
    align_chapter,
    cer,
    chunk_by_timestamps,
    edit_distance,
    filter_segments,
    levenshtein,
    match_reference_span,
    read_timed_words,
    segment_to_record,
    validate_by_asr,
    validate_timed_words,
    write_timed_words,
)
from corpusforge.errors import AlignmentError
from corpusforge.manifest import ManifestRecord
from tests.conftest import make_record, random_sentence, random_word


@functools.lru_cache(maxsize=None)
def brute_force_distance(a: str, b: str) -> int:
    """Independent recursive oracle (memoized over suffix pairs)."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        brute_force_distance(a[1:], b[1:]) + (a[0] != b[0]),
        brute_force_distance(a[1:], b) + 1,
        brute_force_distance(a, b[1:]) + 1,
    )


def replay_path(alignment, ref, hyp):
    """Apply the op path to ref; must reproduce hyp exactly."""
    out = []
    ri = 0
    for op in alignment.path:
        if op.kind is EditOpKind.MATCH:
            assert ref[op.ref_index] == hyp[op.hyp_index]
            out.append(ref[op.ref_index])
            assert op.ref_index == ri
            ri += 1
        elif op.kind is EditOpKind.SUB:
            out.append(hyp[op.hyp_index])
            ri += 1
        elif op.kind is EditOpKind.DEL:
            ri += 1
        else:
            out.append(hyp[op.hyp_index])
    assert ri == len(ref)
    return out


_short = st.text(alphabet="abc", max_size=7)


class TestEditDistance:
    def test_identical_all_match(self):
        alignment = edit_distance("abc", "abc")
        assert alignment.distance == 0
        assert all(op.kind is EditOpKind.MATCH for op in alignment.path)

    def test_single_substitution(self):
        alignment = edit_distance("abc", "axc")
        assert alignment.distance == 1
        assert alignment.substitutions == 1

    def test_all_deletions(self):
        alignment = edit_distance(["a", "b"], [])
        assert alignment.distance == 2
        assert alignment.deletions == 2

    def test_all_insertions(self):
        alignment = edit_distance([], ["a", "b"])
        assert alignment.distance == 2
        assert alignment.insertions == 2

    def test_distance_equals_op_counts(self):
        alignment = edit_distance("kitten", "sitting")
        assert alignment.distance == 3
        assert alignment.distance == alignment.substitutions + alignment.deletions + alignment.insertions

    @given(a=_short, b=_short)
    @settings(max_examples=300)
    def test_matches_oracle(self, a, b):
        alignment = edit_distance(a, b)
        assert alignment.distance == brute_force_distance(a, b)
        assert list(replay_path(alignment, a, b)) == list(b)
        assert alignment.distance == alignment.substitutions + alignment.deletions + alignment.insertions

    @given(a=_short, b=_short, c=_short)
    @settings(max_examples=200)
    def test_metric_axioms(self, a, b, c):
        dab = edit_distance(a, b).distance
        assert (dab == 0) == (a == b)
        assert dab == edit_distance(b, a).distance
        assert dab <= edit_distance(a, c).distance + edit_distance(c, b).distance

    def test_deterministic_backtrace(self):
        first = edit_distance("abcab", "bcaba")
        for _ in range(3):
            assert edit_distance("abcab", "bcaba").path == first.path

    def test_word_tokens(self):
        alignment = edit_distance(["the", "cat", "sat"], ["the", "sat"])
        assert alignment.distance == 1
        assert alignment.deletions == 1


class TestLevenshteinFastPath:
    @given(a=st.text(alphabet="ab? ", max_size=40), b=st.text(alphabet="ab? ", max_size=40))
    @settings(max_examples=300)
    def test_agrees_with_dp(self, a, b):
        assert levenshtein(a, b) == edit_distance(a, b).distance

    def test_long_pattern_beyond_64_symbols(self):
        rng = random.Random(5)
        a = random_sentence(rng, 40)
        b = a[: len(a) // 2] + "zzz" + a[len(a) // 2 :]
        assert levenshtein(a, b) == edit_distance(a, b).distance

    def test_matcher_reuse(self):
        matcher = LevenshteinMatcher("abcd")
        assert matcher.distance("abcd") == 0
        assert matcher.distance("abxd") == 1
        assert matcher.distance("") == 4

    def test_token_sequences(self):
        assert levenshtein(["a", "b", "c"], ["a", "c"]) == 1


class TestCer:
    def test_identical(self):
        assert cer("abc", "abc") == 0.0

    def test_empty_hypothesis(self):
        assert cer("ab", "") == 1.0

    def test_quarter(self):
        assert cer("abcd", "abxd") == 0.25

    def test_empty_reference_denominator(self):
        assert cer("", "ab") == 2.0

    def test_spaces_count(self):
        assert cer("a b", "ab") == pytest.approx(1 / 3)


def regular_words(n, word_dur=0.8, pitch=1.0, start=0.0, rng=None):
    words = []
    for i in range(n):
        word = random_word(rng) if rng else f"w{i}"
        words.append(TimedWord(word, start + i * pitch, start + i * pitch + word_dur))
    return words


class TestChunking:
    def test_empty(self):
        assert chunk_by_timestamps([]) == []

    def test_forty_words_two_chunks(self):
        chunks = chunk_by_timestamps(regular_words(40), max_dur=20.0)
        assert [c.word_span for c in chunks] == [(0, 19), (20, 39)]
        assert all(c.duration <= 20.0 for c in chunks)

    def test_gap_break(self):
        words = [TimedWord("a", 0.0, 0.5), TimedWord("b", 5.5, 6.0)]
        chunks = chunk_by_timestamps(words, gap_break=1.0)
        assert len(chunks) == 2

    def test_gap_at_threshold_not_broken(self):
        words = [TimedWord("a", 0.0, 0.5), TimedWord("b", 1.5, 2.0)]
        assert len(chunk_by_timestamps(words, gap_break=1.0)) == 1

    def test_over_length_single_word_flagged(self):
        words = [TimedWord("long", 0.0, 25.0), TimedWord("next", 25.5, 26.0)]
        chunks = chunk_by_timestamps(words, max_dur=20.0)
        assert chunks[0].flags == (OVER_LENGTH,)
        assert chunks[0].word_span == (0, 0)
        assert chunks[1].flags == ()

    def test_offsets_and_text(self):
        words = [TimedWord("a", 1.0, 1.4), TimedWord("b", 1.6, 2.2)]
        (chunk,) = chunk_by_timestamps(words)
        assert chunk.offset == 1.0
        assert chunk.duration == pytest.approx(1.2)
        assert chunk.hyp_text == "a b"

    def test_invalid_sequences_rejected(self):
        with pytest.raises(AlignmentError, match="overlap"):
            chunk_by_timestamps([TimedWord("a", 0.0, 1.0), TimedWord("b", 0.5, 2.0)])
        with pytest.raises(AlignmentError, match="order"):
            validate_timed_words([TimedWord("a", 3.0, 4.0), TimedWord("b", 0.0, 1.0)])

    @given(
        steps=st.lists(
            st.tuples(
                st.floats(min_value=0.0, max_value=2.5),
                st.floats(min_value=0.05, max_value=3.0),
            ),
            max_size=120,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_concatenation_reproduces_input(self, steps):
        t = 0.0
        words = []
        for i, (gap, dur) in enumerate(steps):
            start = t + gap
            end = start + dur
            words.append(TimedWord(f"w{i}", start, end))
            t = end
        n = len(words)
        chunks = chunk_by_timestamps(words, max_dur=10.0, gap_break=1.0)
        covered = [i for c in chunks for i in range(c.word_span[0], c.word_span[1] + 1)]
        assert covered == list(range(n))
        for c in chunks:
            first, last = c.word_span
            if c.duration > 10.0:
                assert first == last and OVER_LENGTH in c.flags
            assert c.hyp_text == " ".join(w.word for w in words[first : last + 1])


class TestMatchReferenceSpan:
    def test_exact_recovery(self):
        rng = random.Random(11)
        ref_words = random_sentence(rng, 60).split()
        hyp = " ".join(ref_words[20:30])
        span, value = match_reference_span(ref_words, hyp, anchor=15)
        assert span == (20, 29)
        assert value == 0.0

    def test_single_corruption_same_span(self):
        rng = random.Random(12)
        ref_words = random_sentence(rng, 50).split()
        window = ref_words[10:20]
        corrupted = list(window)
        corrupted[4] = "zzzz"
        span, value = match_reference_span(ref_words, " ".join(corrupted), anchor=8)
        assert span == (10, 19)
        chars = len(" ".join(window))
        assert 0.0 < value <= (len(window[4]) + len("zzzz")) / chars

    def test_anchor_beyond_reference(self):
        with pytest.raises(AlignmentError, match="reference exhausted"):
            match_reference_span(["a", "b"], "a", anchor=2)

    def test_empty_hypothesis_rejected(self):
        with pytest.raises(AlignmentError, match="empty hypothesis"):
            match_reference_span(["a"], "", anchor=0)

    def test_tail_shorter_than_window(self):
        ref_words = ["aa", "bb"]
        span, value = match_reference_span(ref_words, "aa bb cc dd ee", anchor=0)
        assert span == (0, 1)

    def test_tie_breaks_earliest_then_shortest(self):
        # repeated text: both (0,0) and (1,1) give cer 0; earliest start wins
        span, value = match_reference_span(["x", "x", "x"], "x", anchor=0)
        assert span == (0, 0)
        assert value == 0.0


def corrupt_text(text, rate, rng):
    letters = "abcdefghijklmnopqrstuvwxyz"
    out = []
    for ch in text:
        r = rng.random()
        if r >= rate or ch == " ":
            out.append(ch)
        else:
            action = rng.randrange(3)
            if action == 0:
                out.append(rng.choice(letters))
            elif action == 1:
                pass
            else:
                out.append(rng.choice(letters))
                out.append(ch)
    return "".join(out)


def chapter_fixture(n_words=200, seed=21, noise=0.0, words_per_second=2.5):
    """Synthetic chapter with ground-truth chunk spans."""
    rng = random.Random(seed)
    chapter_words = [random_word(rng) for _ in range(n_words)]
    timed = []
    t = 0.0
    for word in chapter_words:
        dur = len(word) / (words_per_second * 5.0) + 0.15
        hyp_word = corrupt_text(word, noise, rng) if noise else word
        # corruption may empty a word entirely; keep a single letter
        timed.append(TimedWord(hyp_word or rng.choice("ab"), t, t + dur))
        t += dur + 0.05
    return " ".join(chapter_words), timed


class TestAlignChapter:
    def test_exact_reading_full_recovery(self, hy_profile):
        chapter, timed = chapter_fixture(n_words=120, seed=3)
        segments = align_chapter(chapter, timed, hy_profile)
        assert segments
        assert all(s.cer == 0.0 for s in segments)
        assert all(not s.flags for s in segments)
        assert " ".join(s.ref_text for s in segments) == chapter
        spans = [s.ref_span for s in segments]
        assert spans[0][0] == 0
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            assert b0 == a1 + 1  # contiguous, ordered, non-overlapping

    def test_corrupted_reading_mostly_recovered(self, hy_profile):
        chapter, timed = chapter_fixture(n_words=200, seed=4, noise=0.10)
        segments = align_chapter(chapter, timed, hy_profile)
        matched = [s for s in segments if s.ref_text is not None]
        assert len(matched) >= 0.9 * len(segments)
        assert all(s.cer <= 0.2 for s in matched)

    def test_empty_chapter_all_unmatched(self, hy_profile):
        _, timed = chapter_fixture(n_words=30, seed=5)
        segments = align_chapter("", timed, hy_profile)
        assert segments
        assert all(UNMATCHED in s.flags for s in segments)

    def test_anchors_monotonic_under_noise(self, hy_profile):
        chapter, timed = chapter_fixture(n_words=150, seed=6, noise=0.15)
        segments = align_chapter(chapter, timed, hy_profile)
        spans = [s.ref_span for s in segments if s.ref_span is not None]
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            assert b0 > a1

    def test_rejected_flag_advances_anchor(self, hy_profile):
        chapter, timed = chapter_fixture(n_words=100, seed=7)
        # heavily corrupt exactly the second chunk's words: enough to reject,
        # correlated enough that its best match stays on the true span
        chunks = chunk_by_timestamps(timed)
        assert len(chunks) >= 3
        first, last = chunks[1].word_span
        rng = random.Random(99)
        timed = [
            TimedWord(corrupt_text(w.word, 0.5, rng) or "q", w.start, w.end)
            if first <= i <= last
            else w
            for i, w in enumerate(timed)
        ]
        segments = align_chapter(chapter, timed, hy_profile, cer_accept=0.2)
        assert REJECTED in segments[1].flags
        # later chunks still match exactly
        assert segments[-1].cer == 0.0
        assert not segments[-1].flags

    def test_empty_hypothesis_chunk_flagged(self, ka_profile):
        # Latin-only words normalize to themselves under ka; digits-only word is kept,
        # but a punctuation-only word normalizes to empty
        words = [TimedWord("...", 0.0, 1.0)]
        segments = align_chapter("კარგი", words, ka_profile)
        assert EMPTY_HYPOTHESIS in segments[0].flags


class TestFilterSegments:
    def _segment(self, duration, cer_value=None, with_ref=True):
        return Segment(
            parent_audio="a.wav",
            offset=0.0,
            duration=duration,
            hyp_text="x",
            word_span=(0, 0),
            ref_text="x" if with_ref else None,
            cer=cer_value if with_ref else None,
        )

    def test_kept(self):
        kept, dropped = filter_segments([self._segment(10.0, 0.01)], cer_max=0.3)
        assert len(kept) == 1 and not dropped

    def test_min_dur(self):
        _, dropped = filter_segments([self._segment(2.0, 0.01)], cer_max=0.3)
        assert dropped[0][1] == "min_dur"

    def test_max_dur(self):
        _, dropped = filter_segments([self._segment(16.0, 0.01)], cer_max=0.3)
        assert dropped[0][1] == "max_dur"

    def test_cer_max(self):
        _, dropped = filter_segments([self._segment(10.0, 0.9)], cer_max=0.3)
        assert dropped[0][1] == "cer_max"

    def test_no_ref(self):
        _, dropped = filter_segments([self._segment(10.0, with_ref=False)], cer_max=0.3)
        assert dropped[0][1] == "no_ref"

    def test_no_cer_ceiling_keeps_unmatched(self):
        kept, _ = filter_segments([self._segment(10.0, with_ref=False)])
        assert len(kept) == 1


class TestValidateByAsr:
    def _hyp(self, path, text, offset=0.0):
        return ManifestRecord(audio_filepath=path, duration=1.0, offset=offset, pred_text=text)

    def test_identical_accepted_at_zero_threshold(self, hy_profile):
        records = [make_record("a.wav", text="Abc def.")]
        hyps = [self._hyp("a.wav", "abc def")]
        accepted, rejected = validate_by_asr(records, hyps, hy_profile, 0.0)
        assert len(accepted) == 1 and not rejected
        assert accepted[0].pred_text == "abc def"

    def test_dissimilar_rejected(self, hy_profile):
        records = [make_record("a.wav", text="abc def")]
        hyps = [self._hyp("a.wav", "zzzzzz qq")]
        accepted, rejected = validate_by_asr(records, hyps, hy_profile, 0.2)
        assert not accepted
        assert rejected[0][1] == "cer"

    def test_missing_hypothesis(self, hy_profile):
        records = [make_record("a.wav", text="abc")]
        accepted, rejected = validate_by_asr(records, [], hy_profile, 0.5)
        assert rejected[0][1] == "no_hypothesis"

    def test_pairing_by_offset(self, hy_profile):
        records = [make_record("a.wav", text="abc", offset=1.0)]
        hyps = [self._hyp("a.wav", "zzz", offset=0.0), self._hyp("a.wav", "abc", offset=1.0)]
        accepted, _ = validate_by_asr(records, hyps, hy_profile, 0.0)
        assert len(accepted) == 1

    @given(seed=st.integers(0, 10**6))
    @settings(max_examples=30, deadline=None)
    def test_threshold_sweep_monotone(self, seed):
        from corpusforge.textnorm import build_profile

        hy_profile = build_profile("hy")
        rng = random.Random(seed)
        records = []
        hyps = []
        for i in range(12):
            text = random_sentence(rng, rng.randint(1, 6))
            records.append(make_record(f"r{i}.wav", text=text))
            hyps.append(self._hyp(f"r{i}.wav", corrupt_text(text, rng.random() * 0.5, rng)))
        previous: set = set()
        for threshold in (0.0, 0.1, 0.2, 0.4, 0.8, 1.0):
            accepted, _ = validate_by_asr(records, hyps, hy_profile, threshold)
            current = {r.audio_filepath for r in accepted}
            assert previous <= current
            previous = current


class TestTimedWordsIo:
    def test_round_trip(self, tmp_path):
        words = [TimedWord("aa", 0.0, 1.0), TimedWord("bb", 1.5, 2.0)]
        path = tmp_path / "words.jsonl"
        write_timed_words(words, path)
        assert read_timed_words(path) == words

    def test_missing_key_named(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"word": "a", "start": 0.0}\n')
        with pytest.raises(Exception, match="line 1: missing end"):
            read_timed_words(path)


def test_segment_to_record_carries_cer_and_flags():
    seg = Segment(
        parent_audio="ch1.wav",
        offset=10.0,
        duration=5.0,
        hyp_text="a b",
        word_span=(0, 1),
        ref_text="a b",
        cer=0.0,
        flags=(REJECTED,),
    )
    rec = segment_to_record(seg, language="hy")
    assert rec.audio_filepath == "ch1.wav"
    assert rec.offset == 10.0
    assert rec.extra["cer"] == 0.0
    assert rec.extra["flags"] == [REJECTED]
    assert rec.text == "a b"
    assert rec.pred_text == "a b"
