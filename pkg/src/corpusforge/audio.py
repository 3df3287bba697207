"""PCM WAV reading/writing, time-span slicing, and energy-based VAD.

Only 16-bit integer PCM WAV is supported; every source in a collection
pipeline can be transcoded to it, and keeping the decoder tiny avoids
codec dependencies.  The voice-activity detector thresholds frame energy
relative to the buffer's own 95th-percentile frame level, so one
parameter set works across sources with wildly different gain.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AudioError

_INT16_FULL_SCALE = 32768.0


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio: sample rate and amplitudes normalized to [-1, 1]."""

    sample_rate: int
    samples: np.ndarray

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError("samples must be one-dimensional (mono)")
        if samples.size and (samples.min() < -1.0 or samples.max() > 1.0):
            raise AudioError("samples must lie within [-1, 1]")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AudioBuffer):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)


@dataclass(frozen=True)
class SpeechSpan:
    """A detected speech interval in seconds."""

    start: float
    end: float

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise AudioError(f"invalid span [{self.start}, {self.end}]")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class VadParams:
    """Energy VAD tuning.

    ``threshold_db`` is measured below the 95th-percentile frame RMS of
    the buffer itself, making detection invariant to amplitude scaling.
    """

    frame_ms: float = 25.0
    hop_ms: float = 10.0
    threshold_db: float = 30.0
    min_speech_ms: float = 200.0
    min_gap_ms: float = 300.0
    pad_ms: float = 100.0

    def __post_init__(self) -> None:
        if not self.hop_ms > 0:
            raise AudioError("hop_ms must be positive")
        if self.frame_ms < self.hop_ms:
            raise AudioError("frame_ms must be >= hop_ms")
        for name in ("threshold_db", "min_speech_ms", "min_gap_ms", "pad_ms"):
            if getattr(self, name) < 0:
                raise AudioError(f"{name} must be non-negative")


def read_wav(path: str | Path) -> AudioBuffer:
    """Read a 16-bit PCM WAV file; stereo is downmixed by channel average."""
    path = Path(path)
    try:
        wf = wave.open(str(path), "rb")
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise AudioError(f"{path}: unsupported encoding ({msg}); only PCM WAV is supported") from exc
        raise AudioError(f"{path}: not a readable WAV file: {msg}") from exc
    except EOFError as exc:
        raise AudioError(f"{path}: truncated WAV file") from exc
    with wf:
        channels = wf.getnchannels()
        sampwidth = wf.getsampwidth()
        rate = wf.getframerate()
        nframes = wf.getnframes()
        if sampwidth != 2:
            raise AudioError(f"{path}: unsupported bit depth {sampwidth * 8}; only 16-bit PCM is supported")
        if channels not in (1, 2):
            raise AudioError(f"{path}: unsupported channel count {channels}")
        raw = wf.readframes(nframes)
    if len(raw) < nframes * 2 * channels:
        raise AudioError(f"{path}: truncated WAV file (header promises {nframes} frames)")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _INT16_FULL_SCALE
    if channels == 2:
        data = (data[0::2] + data[1::2]) / 2.0
    return AudioBuffer(sample_rate=rate, samples=data)


def write_wav(buffer: AudioBuffer, path: str | Path) -> None:
    """Write a buffer as 16-bit PCM mono WAV.

    A read-back differs from the input by at most 2/65536 per sample
    (quantization, plus clipping of +1.0 to the max positive code).
    """
    quantized = np.clip(
        np.round(buffer.samples * _INT16_FULL_SCALE), -32768, 32767
    ).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(buffer.sample_rate)
            wf.writeframes(quantized.tobytes())
    except OSError as exc:
        raise AudioError(f"cannot write {path}: {exc}") from exc


def slice_buffer(buffer: AudioBuffer, start_s: float, end_s: float) -> AudioBuffer:
    """Extract [start_s, end_s); duration is exact to one sample period."""
    duration = buffer.duration
    if not 0 <= start_s < end_s:
        raise AudioError(f"invalid slice [{start_s}, {end_s}]")
    if end_s > duration + 1e-9:
        raise AudioError(f"slice end {end_s}s exceeds buffer duration {duration}s")
    first = round(start_s * buffer.sample_rate)
    last = min(round(end_s * buffer.sample_rate), len(buffer.samples))
    return AudioBuffer(sample_rate=buffer.sample_rate, samples=buffer.samples[first:last])


def _frame_rms_db(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Per-frame RMS in dB; silent frames come out as -inf."""
    n = len(samples)
    starts = np.arange(0, max(1, n - frame_len + 1), hop)
    squares = np.concatenate(([0.0], np.cumsum(samples * samples)))
    ends = np.minimum(starts + frame_len, n)
    energy = (squares[ends] - squares[starts]) / (ends - starts)
    rms = np.sqrt(np.maximum(energy, 0.0))
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(rms)


def energy_vad(buffer: AudioBuffer, params: VadParams | None = None) -> list[SpeechSpan]:
    """Detect speech spans by relative frame energy.

    Frames whose RMS exceeds (95th-percentile frame dB - threshold_db)
    are active.  Active runs become spans; spans shorter than
    ``min_speech_ms`` are dropped, gaps shorter than ``min_gap_ms`` are
    bridged, and spans are padded by ``pad_ms``, clipped to the buffer,
    and re-merged.  Output spans are sorted and non-overlapping.
    """
    params = params or VadParams()
    if len(buffer.samples) == 0:
        return []
    sr = buffer.sample_rate
    frame_len = max(1, round(params.frame_ms * sr / 1000.0))
    hop = max(1, round(params.hop_ms * sr / 1000.0))
    db = _frame_rms_db(buffer.samples, frame_len, hop)
    # The order statistic ("lower") avoids interpolating between -inf and
    # finite levels, and keeps the active set exactly scale-invariant.
    threshold = np.percentile(db, 95, method="lower") - params.threshold_db
    # Digitally silent frames (-inf) are never speech.
    active = np.isfinite(db) & (db > threshold)

    # group consecutive active frames into raw spans
    spans: list[tuple[float, float]] = []
    run_start = None
    for i, flag in enumerate(active):
        if flag and run_start is None:
            run_start = i
        elif not flag and run_start is not None:
            spans.append((run_start * hop / sr, ((i - 1) * hop + frame_len) / sr))
            run_start = None
    if run_start is not None:
        spans.append((run_start * hop / sr, ((len(active) - 1) * hop + frame_len) / sr))

    spans = [s for s in spans if (s[1] - s[0]) * 1000.0 >= params.min_speech_ms]

    bridged: list[tuple[float, float]] = []
    for span in spans:
        if bridged and (span[0] - bridged[-1][1]) * 1000.0 < params.min_gap_ms:
            bridged[-1] = (bridged[-1][0], span[1])
        else:
            bridged.append(span)

    pad = params.pad_ms / 1000.0
    duration = buffer.duration
    merged: list[tuple[float, float]] = []
    for start, end in bridged:
        start = max(0.0, start - pad)
        end = min(duration, end + pad)
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return [SpeechSpan(start, end) for start, end in merged if end > start]
