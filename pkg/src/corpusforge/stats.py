"""Bootstrap confidence intervals and probability of improvement (POI).

Two ASR systems scored on the same test set are compared by resampling
utterances with replacement, using the SAME indices for both systems, and
recomputing pooled WER on each replicate.  POI is the fraction of
replicates in which system B beats system A, with half credit for ties,
so a system compared against itself scores exactly 0.5 and
POI(a, b) + POI(b, a) = 1.

Randomness is pinned: replicate ``r`` draws its indices from numpy's
PCG64 generator seeded with ``SeedSequence((seed, r))``, so any subset of
replicates can be recomputed independently (serial and parallel runs
agree exactly) and reports reproduce across machines.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import StatsError

GENERATOR_NAME = "numpy PCG64, SeedSequence((seed, replicate))"

#: POI at or above this is significant.
SIGNIFICANCE_THRESHOLD = 0.95
#: POI in [ACCEPTABLE_THRESHOLD, SIGNIFICANCE_THRESHOLD) is reported as
#: "still acceptable" evidence of improvement.
ACCEPTABLE_THRESHOLD = 0.80

#: Exhaustive enumeration cap: N**N resamples must stay desk-scale.
_MAX_EXHAUSTIVE_RESAMPLES = 2_000_000


@dataclass(frozen=True)
class SystemScores:
    """Per-utterance (errors, reference words) pairs for one system."""

    label: str
    per_utterance: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if not self.per_utterance:
            raise StatsError(f"system {self.label!r}: no utterances")
        for errors, ref_words in self.per_utterance:
            if errors < 0 or ref_words < 0:
                raise StatsError(f"system {self.label!r}: negative counts")
        if sum(rw for _, rw in self.per_utterance) <= 0:
            raise StatsError(f"system {self.label!r}: total reference words must be positive")

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[int, int]], label: str = "") -> "SystemScores":
        return cls(label=label, per_utterance=tuple((int(e), int(r)) for e, r in pairs))

    @classmethod
    def from_per_utterance_file(cls, path: str | Path, label: str = "") -> "SystemScores":
        """Load from a metrics per-utterance dump (JSON object per line)."""
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    errors = obj["substitutions"] + obj["deletions"] + obj["insertions"]
                    pairs.append((errors, obj["ref_word_count"]))
                except (ValueError, KeyError, TypeError) as exc:
                    raise StatsError(f"{path}: line {lineno}: {exc}") from None
        return cls.from_pairs(pairs, label=label or str(path))


@dataclass(frozen=True)
class BootstrapReport:
    """Result of a paired bootstrap comparison of two systems."""

    label_a: str
    label_b: str
    replicates: int
    seed: int
    level: float
    mean_diff: float
    ci_low: float
    ci_high: float
    poi: float
    exhaustive: bool = False
    generator: str = GENERATOR_NAME

    def to_text(self) -> str:
        lines = [
            f"comparison: {self.label_a or 'a'} vs {self.label_b or 'b'}",
            f"replicates: {self.replicates}",
            f"sampling: {'exhaustive enumeration' if self.exhaustive else 'monte carlo'}",
            f"generator: {self.generator}",
            f"seed: {self.seed}",
            f"level: {self.level:.2f}",
            f"mean_diff: {self.mean_diff:.4f}",
            f"ci: [{self.ci_low:.4f}, {self.ci_high:.4f}]",
            f"poi: {self.poi:.6f}",
            f"significance: {significance_band(self.poi)}",
            "note: positive diff (wer_a - wer_b) means system b improves on a",
        ]
        return "\n".join(lines) + "\n"


def is_significant(poi: float, threshold: float = SIGNIFICANCE_THRESHOLD) -> bool:
    """True when the probability of improvement clears the threshold."""
    if not 0.0 <= poi <= 1.0:
        raise StatsError(f"poi must lie in [0, 1], got {poi}")
    return poi >= threshold


def significance_band(poi: float) -> str:
    """Human-readable verdict, including the still-acceptable band."""
    if poi >= SIGNIFICANCE_THRESHOLD:
        return f"significant (poi >= {SIGNIFICANCE_THRESHOLD:.2f})"
    if poi >= ACCEPTABLE_THRESHOLD:
        return (
            f"not significant but still acceptable "
            f"({ACCEPTABLE_THRESHOLD:.2f} <= poi < {SIGNIFICANCE_THRESHOLD:.2f})"
        )
    return f"not significant (poi < {ACCEPTABLE_THRESHOLD:.2f})"


def _check_paired(a: SystemScores, b: SystemScores) -> int:
    if len(a.per_utterance) != len(b.per_utterance):
        raise StatsError(
            f"systems must score the same utterances: "
            f"{len(a.per_utterance)} vs {len(b.per_utterance)}"
        )
    return len(a.per_utterance)


def _poi_from_counts(positive: int, ties: int, total: int) -> float:
    return (positive + 0.5 * ties) / total


def bootstrap_compare(
    a: SystemScores,
    b: SystemScores,
    B: int = 10000,
    level: float = 0.95,
    seed: int = 0,
    exhaustive: bool = False,
) -> BootstrapReport:
    """Paired bootstrap of the WER difference (a minus b).

    Each replicate draws N utterance indices with replacement (shared by
    both systems) and recomputes pooled WER; the report carries the mean
    difference, the percentile confidence interval at ``level``, and POI
    with half-credit ties.  Replicates that draw zero reference words are
    redrawn so exactly ``B`` valid replicates contribute.

    With ``exhaustive=True`` the Monte Carlo draw is replaced by full
    enumeration of all N**N index sequences (equally weighted; invalid
    resamples excluded), which is feasible only for small N.
    """
    n = _check_paired(a, b)
    if not 0.0 < level < 1.0:
        raise StatsError(f"level must lie in (0, 1), got {level}")
    errors_a = np.array([e for e, _ in a.per_utterance], dtype=np.int64)
    words_a = np.array([w for _, w in a.per_utterance], dtype=np.int64)
    errors_b = np.array([e for e, _ in b.per_utterance], dtype=np.int64)
    words_b = np.array([w for _, w in b.per_utterance], dtype=np.int64)

    if exhaustive:
        total = n**n
        if total > _MAX_EXHAUSTIVE_RESAMPLES:
            raise StatsError(
                f"exhaustive enumeration of {n}**{n} resamples is infeasible; "
                f"use exhaustive_poi (multiset enumeration) or monte carlo"
            )
        index_sets = np.array(list(itertools.product(range(n), repeat=n)), dtype=np.int64)
        sums_ea = errors_a[index_sets].sum(axis=1)
        sums_wa = words_a[index_sets].sum(axis=1)
        sums_eb = errors_b[index_sets].sum(axis=1)
        sums_wb = words_b[index_sets].sum(axis=1)
        valid = (sums_wa > 0) & (sums_wb > 0)
        if not valid.any():
            raise StatsError("no valid resamples (zero reference words everywhere)")
        diffs = (
            100.0 * sums_ea[valid] / sums_wa[valid]
            - 100.0 * sums_eb[valid] / sums_wb[valid]
        )
        replicates = int(valid.sum())
    else:
        if B < 1:
            raise StatsError(f"B must be >= 1, got {B}")
        diffs = np.empty(B, dtype=np.float64)
        for r in range(B):
            rng = np.random.default_rng((seed, r))
            while True:
                idx = rng.integers(0, n, size=n)
                wa = int(words_a[idx].sum())
                wb = int(words_b[idx].sum())
                if wa > 0 and wb > 0:
                    break
            diffs[r] = 100.0 * int(errors_a[idx].sum()) / wa - 100.0 * int(errors_b[idx].sum()) / wb
        replicates = B

    positive = int((diffs > 0).sum())
    ties = int((diffs == 0).sum())
    poi = _poi_from_counts(positive, ties, len(diffs))
    alpha = (1.0 - level) / 2.0
    ci_low, ci_high = np.percentile(diffs, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return BootstrapReport(
        label_a=a.label,
        label_b=b.label,
        replicates=replicates,
        seed=seed,
        level=level,
        mean_diff=float(diffs.mean()),
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        poi=poi,
        exhaustive=exhaustive,
    )


def exhaustive_poi(a: SystemScores, b: SystemScores) -> float:
    """Exact POI over all N**N equally-weighted resamples.

    Enumerates index multisets with multinomial weights instead of raw
    index sequences, which keeps N <= 8 feasible.  Resamples with zero
    reference words are excluded (matching the redraw rule).
    """
    n = _check_paired(a, b)
    if n > 8:
        raise StatsError(f"exhaustive_poi supports at most 8 utterances, got {n}")
    errors_a = [e for e, _ in a.per_utterance]
    words_a = [w for _, w in a.per_utterance]
    errors_b = [e for e, _ in b.per_utterance]
    words_b = [w for _, w in b.per_utterance]

    positive = 0
    ties = 0
    total = 0
    for combo in itertools.combinations_with_replacement(range(n), n):
        weight = math.factorial(n)
        counts: dict[int, int] = {}
        for idx in combo:
            counts[idx] = counts.get(idx, 0) + 1
        for c in counts.values():
            weight //= math.factorial(c)
        sums_ea = sums_wa = sums_eb = sums_wb = 0
        for idx, c in counts.items():
            sums_ea += errors_a[idx] * c
            sums_wa += words_a[idx] * c
            sums_eb += errors_b[idx] * c
            sums_wb += words_b[idx] * c
        if sums_wa <= 0 or sums_wb <= 0:
            continue
        diff = 100.0 * sums_ea / sums_wa - 100.0 * sums_eb / sums_wb
        total += weight
        if diff > 0:
            positive += weight
        elif diff == 0:
            ties += weight
    if total == 0:
        raise StatsError("no valid resamples (zero reference words everywhere)")
    return _poi_from_counts(positive, ties, total)
