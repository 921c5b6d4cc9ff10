"""Pure metric computations over phase timings.

Throughput, per-token normalization, phase shares, aggregate statistics
(population std), and the coefficient-of-variation analysis over turn
buckets. Everything here is a pure function on immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .errors import (
    DegenerateTiming,
    EmptyPhase,
    EmptySample,
    NonFiniteInput,
    NonPositiveDuration,
    ZeroMeanCV,
)

MS_PER_SECOND = 1000.0


@dataclass(frozen=True)
class PhaseTiming:
    """Token counts and durations of one completion, split by phase.

    ``total_ms`` is always exactly ``prefill_ms + decode_ms``; use
    :meth:`of` to construct instances without restating the sum.
    """

    prompt_tokens: int
    prefill_ms: float
    generated_tokens: int
    decode_ms: float
    total_ms: float

    def __post_init__(self):
        if self.prompt_tokens < 1:
            raise ValueError("prompt_tokens must be >= 1")
        if self.generated_tokens < 0:
            raise ValueError("generated_tokens must be >= 0")
        if self.prefill_ms < 0 or self.decode_ms < 0:
            raise ValueError("phase durations must be >= 0")
        if self.generated_tokens == 0 and self.decode_ms != 0:
            raise ValueError("decode_ms must be 0 when no tokens were generated")
        if self.total_ms != self.prefill_ms + self.decode_ms:
            raise ValueError("total_ms must equal prefill_ms + decode_ms exactly")

    @classmethod
    def of(cls, prompt_tokens: int, prefill_ms: float,
           generated_tokens: int, decode_ms: float) -> "PhaseTiming":
        return cls(prompt_tokens, prefill_ms, generated_tokens, decode_ms,
                   prefill_ms + decode_ms)


@dataclass(frozen=True)
class ThroughputSample:
    """Tokens/second per phase. A phase with no measurable work is None."""

    prefill_tps: float | None
    decode_tps: float | None

    def __post_init__(self):
        for v in (self.prefill_tps, self.decode_tps):
            if v is not None and (not math.isfinite(v) or v < 0):
                raise ValueError("throughput must be finite and >= 0")


@dataclass(frozen=True)
class AggregateStats:
    """Population summary of a sample: n >= 1 and std divides by n."""

    n: int
    mean: float
    std: float
    min: float
    max: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.std < 0:
            raise ValueError("std must be >= 0")


class Phase(str, Enum):
    PREFILL = "prefill"
    DECODE = "decode"


@dataclass(frozen=True)
class CVEntry:
    turn: int
    phase: Phase
    cv: float
    n: int


@dataclass(frozen=True)
class CVReport:
    entries: tuple[CVEntry, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class PhaseShare:
    prefill_fraction: float
    decode_fraction: float


def throughput(tokens: int, duration_ms: float) -> float:
    """Tokens per second for a phase that processed ``tokens`` in ``duration_ms``."""
    if tokens < 1:
        raise EmptyPhase("cannot compute throughput of an empty phase")
    if duration_ms <= 0:
        raise NonPositiveDuration(f"duration must be positive, got {duration_ms}")
    return tokens / (duration_ms / MS_PER_SECOND)


def per_token_time(duration_ms: float, tokens: int) -> float:
    """Average milliseconds per token: ``duration_ms / tokens``."""
    if tokens < 1:
        raise EmptyPhase("cannot normalize over zero tokens")
    if duration_ms < 0:
        raise NonPositiveDuration(f"duration must be >= 0, got {duration_ms}")
    return duration_ms / tokens


def phase_share(t: PhaseTiming) -> PhaseShare:
    """Fraction of total time spent in each phase; fractions sum to 1 within one ulp."""
    if t.total_ms <= 0:
        raise DegenerateTiming("phase shares undefined for total_ms = 0")
    return PhaseShare(t.prefill_ms / t.total_ms, t.decode_ms / t.total_ms)


def aggregate(values: Iterable[float]) -> AggregateStats:
    """Population mean/std plus min/max, computed with exact two-pass summation.

    ``math.fsum`` makes the result independent of input ordering.
    """
    vals = [float(v) for v in values]
    if not vals:
        raise EmptySample("cannot aggregate an empty sample")
    for v in vals:
        if not math.isfinite(v):
            raise NonFiniteInput(f"non-finite value in sample: {v}")
    n = len(vals)
    mean = math.fsum(vals) / n
    variance = math.fsum((v - mean) ** 2 for v in vals) / n
    return AggregateStats(n=n, mean=mean, std=math.sqrt(variance),
                          min=min(vals), max=max(vals))


def merge_stats(a: AggregateStats, b: AggregateStats) -> AggregateStats:
    """Combine two partial aggregates as if computed over the concatenated sample."""
    n = a.n + b.n
    mean = (a.n * a.mean + b.n * b.mean) / n
    delta = b.mean - a.mean
    m2 = a.n * a.std ** 2 + b.n * b.std ** 2 + delta ** 2 * a.n * b.n / n
    return AggregateStats(n=n, mean=mean, std=math.sqrt(max(0.0, m2 / n)),
                          min=min(a.min, b.min), max=max(a.max, b.max))


def coefficient_of_variation(stats: AggregateStats) -> float:
    """Dimensionless ratio std / mean; percent rendering is a formatting concern."""
    if stats.mean == 0:
        raise ZeroMeanCV("CV undefined for zero-mean sample")
    return stats.std / stats.mean


def cv_by_turn(records: Sequence) -> CVReport:
    """CV of per-phase throughput bucketed by 1-based turn index.

    ``records`` is anything carrying ``turn_index`` and a ``throughput``
    ThroughputSample (phases with a None sample are skipped). Buckets with a
    single observation report cv = 0 and are identifiable by ``n == 1``.
    """
    buckets: dict[int, dict[Phase, list[float]]] = {}
    for rec in records:
        turn = rec.turn_index
        if turn < 1:
            raise ValueError(f"turn_index must be >= 1, got {turn}")
        sample = rec.throughput
        if sample is None:
            continue
        per_phase = buckets.setdefault(turn, {Phase.PREFILL: [], Phase.DECODE: []})
        if sample.prefill_tps is not None:
            per_phase[Phase.PREFILL].append(sample.prefill_tps)
        if sample.decode_tps is not None:
            per_phase[Phase.DECODE].append(sample.decode_tps)

    entries = []
    for turn in sorted(buckets):
        for phase in (Phase.PREFILL, Phase.DECODE):
            vals = buckets[turn][phase]
            if not vals:
                continue
            stats = aggregate(vals)
            if stats.n == 1:
                cv = 0.0
            else:
                if stats.mean == 0:
                    raise ZeroMeanCV(
                        f"zero mean throughput in bucket turn={turn} phase={phase.value}"
                    )
                cv = coefficient_of_variation(stats)
            entries.append(CVEntry(turn=turn, phase=phase, cv=cv, n=stats.n))
    return CVReport(entries=tuple(entries))
