"""Process resource sampling and Prometheus text exposition.

CPU usage is recorded under two conventions because "percent CPU" is
ambiguous on multicore hosts: ``cpu_core_fraction`` is process CPU time
over wall time (1.0 = one saturated core), ``cpu_total_fraction`` divides
that by the logical core count. Memory is resident set size.
"""

from __future__ import annotations

import math
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import psutil

from .errors import EmptySample, InvalidMetricName, TargetGone
from .metrics import AggregateStats, aggregate

DEFAULT_INTERVAL_MS = 500
MIN_INTERVAL_MS = 50

_METRIC_NAME_RE = re.compile(r"^[a-zA-Z_:][a-zA-Z0-9_:]*$")
_LABEL_NAME_RE = re.compile(r"^[a-zA-Z_][a-zA-Z0-9_]*$")


@dataclass(frozen=True)
class ResourceSample:
    """One observation of a process; CPU fields are None on the baseline read."""

    at: float  # monotonic seconds
    rss_bytes: int
    cpu_core_fraction: float | None
    cpu_total_fraction: float | None
    baseline: bool = False


@dataclass(frozen=True)
class ResourceSummary:
    cpu: AggregateStats       # over cpu_total_fraction
    rss: AggregateStats       # over rss_bytes
    peak_rss_bytes: int
    duration_s: float
    sample_count: int


class ProcessProbe:
    """Samples one process; keeps the previous CPU reading for deltas."""

    def __init__(self, pid: int, core_count: int | None = None):
        self.pid = pid
        self.core_count = core_count or psutil.cpu_count(logical=True) or 1
        try:
            self._process = psutil.Process(pid)
        except psutil.NoSuchProcess as exc:
            raise TargetGone(f"pid {pid} does not exist") from exc
        self._last_cpu_s: float | None = None
        self._last_at: float | None = None

    def sample(self) -> ResourceSample:
        try:
            with self._process.oneshot():
                cpu = self._process.cpu_times()
                rss = self._process.memory_info().rss
        except (psutil.NoSuchProcess, psutil.ZombieProcess) as exc:
            raise TargetGone(f"pid {self.pid} exited") from exc
        now = time.monotonic()
        cpu_s = cpu.user + cpu.system
        if self._last_cpu_s is None:
            self._last_cpu_s, self._last_at = cpu_s, now
            return ResourceSample(at=now, rss_bytes=rss, cpu_core_fraction=None,
                                  cpu_total_fraction=None, baseline=True)
        wall_delta = now - self._last_at
        cpu_delta = cpu_s - self._last_cpu_s
        self._last_cpu_s, self._last_at = cpu_s, now
        if wall_delta <= 0:
            core_fraction = 0.0
        else:
            core_fraction = max(0.0, cpu_delta / wall_delta)
        return ResourceSample(
            at=now,
            rss_bytes=rss,
            cpu_core_fraction=core_fraction,
            cpu_total_fraction=core_fraction / self.core_count,
        )


class SampleSink(Protocol):
    def emit(self, sample: ResourceSample) -> None: ...
    def close(self, reason: str) -> None: ...


class MemorySink:
    """Collects samples in arrival order; close() marks the stream finished."""

    def __init__(self):
        self.samples: list[ResourceSample] = []
        self.close_reason: str | None = None
        self._lock = threading.Lock()

    def emit(self, sample: ResourceSample) -> None:
        with self._lock:
            self.samples.append(sample)

    def close(self, reason: str) -> None:
        with self._lock:
            if self.close_reason is None:
                self.close_reason = reason


class SamplerHandle:
    """Background sampling task; ``stop()`` is idempotent and closes the sink."""

    def __init__(self, probe: ProcessProbe, interval_ms: int, sink: SampleSink):
        self._probe = probe
        self._interval_s = interval_ms / 1000.0
        self._sink = sink
        self._stop = threading.Event()
        self._closed = False
        self._close_lock = threading.Lock()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        next_at = time.monotonic()
        while not self._stop.is_set():
            try:
                self._sink.emit(self._probe.sample())
            except TargetGone:
                self._close("target_gone")
                return
            next_at += self._interval_s
            delay = next_at - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
        self._close("stopped")

    def _close(self, reason: str) -> None:
        with self._close_lock:
            if not self._closed:
                self._closed = True
                self._sink.close(reason)

    def stop(self) -> None:
        self._stop.set()

    def join(self, timeout: float | None = None) -> None:
        self._thread.join(timeout)


def sample_process(target: int | ProcessProbe) -> ResourceSample:
    """One-shot convenience wrapper; prefer holding a ProcessProbe for deltas."""
    probe = target if isinstance(target, ProcessProbe) else ProcessProbe(target)
    return probe.sample()


def run_sampler(target: int | ProcessProbe, interval_ms: int,
                sink: SampleSink) -> SamplerHandle:
    if interval_ms < MIN_INTERVAL_MS:
        raise ValueError(f"interval_ms must be >= {MIN_INTERVAL_MS}")
    probe = target if isinstance(target, ProcessProbe) else ProcessProbe(target)
    return SamplerHandle(probe, interval_ms, sink)


def summarize(samples: Iterable[ResourceSample]) -> ResourceSummary:
    """Aggregate a sample run; baseline reads (no CPU delta yet) are dropped."""
    usable = [s for s in samples if not s.baseline]
    if not usable:
        raise EmptySample("no non-baseline samples to summarize")
    cpu = aggregate(s.cpu_total_fraction for s in usable)
    rss = aggregate(float(s.rss_bytes) for s in usable)
    return ResourceSummary(
        cpu=cpu,
        rss=rss,
        peak_rss_bytes=int(rss.max),
        duration_s=usable[-1].at - usable[0].at,
        sample_count=len(usable),
    )


# --- Prometheus text exposition (format 0.0.4) ----------------------------

@dataclass(frozen=True)
class MetricPoint:
    name: str
    labels: tuple[tuple[str, str], ...]
    value: float
    metric_type: str = "gauge"  # or "counter"


class MetricsHub:
    """Point-in-time metric snapshot store; history is the scraper's job.

    Writers serialize on an internal lock; ``snapshot`` copies so rendering
    never blocks samplers.
    """

    def __init__(self):
        self._points: dict[tuple[str, tuple[tuple[str, str], ...]], MetricPoint] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _key(name: str, labels: dict[str, str]) -> tuple:
        return name, tuple(sorted(labels.items()))

    def set_gauge(self, name: str, labels: dict[str, str], value: float) -> None:
        key = self._key(name, labels)
        with self._lock:
            self._points[key] = MetricPoint(name, key[1], float(value), "gauge")

    def inc_counter(self, name: str, labels: dict[str, str], by: float = 1.0) -> None:
        key = self._key(name, labels)
        with self._lock:
            current = self._points.get(key)
            total = (current.value if current else 0.0) + by
            self._points[key] = MetricPoint(name, key[1], total, "counter")

    def snapshot(self) -> list[MetricPoint]:
        with self._lock:
            return list(self._points.values())


def _escape_label_value(value: str) -> str:
    return value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def _render_value(value: float) -> str:
    """Shortest decimal that round-trips; integral values lose the '.0'."""
    if value != value or value in (math.inf, -math.inf):
        raise ValueError(f"metric values must be finite, got {value}")
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    return text


def render_prometheus(snapshot: Iterable[MetricPoint]) -> str:
    """Deterministic exposition: metrics sorted by name, series label-sorted."""
    by_name: dict[str, list[MetricPoint]] = {}
    types: dict[str, str] = {}
    for point in snapshot:
        if not _METRIC_NAME_RE.match(point.name):
            raise InvalidMetricName(f"invalid metric name {point.name!r}")
        for label_name, _ in point.labels:
            if not _LABEL_NAME_RE.match(label_name):
                raise InvalidMetricName(f"invalid label name {label_name!r}")
        by_name.setdefault(point.name, []).append(point)
        types[point.name] = point.metric_type
    lines: list[str] = []
    for name in sorted(by_name):
        lines.append(f"# TYPE {name} {types[name]}")
        series = sorted(by_name[name], key=lambda p: p.labels)
        for point in series:
            if point.labels:
                label_text = ",".join(
                    f'{k}="{_escape_label_value(v)}"' for k, v in point.labels
                )
                lines.append(f"{name}{{{label_text}}} {_render_value(point.value)}")
            else:
                lines.append(f"{name} {_render_value(point.value)}")
    if not lines:
        return ""
    return "\n".join(lines) + "\n"
