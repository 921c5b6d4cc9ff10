"""Experiment driver: replay conversation workloads and build reports.

Requests are issued strictly sequentially (one in flight) so measurements
reflect an unloaded backend. Each model is warmed up with discarded
requests before its first counted repetition, and assistant replies from
the live run (not dataset reference replies) accumulate into the
conversation history.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .dataset import Conversation, DatasetStats, load_dataset
from .errors import ContextOverflow, EmptySample, IoError, ModelRunFailed
from .gateway import ChatRequest, CompletionResult, FinishReason, Gateway, Message, Role
from .metrics import (
    AggregateStats,
    CVReport,
    PhaseTiming,
    ThroughputSample,
    aggregate,
    cv_by_turn,
    per_token_time,
    throughput,
)
from .monitor import ResourceSummary

logger = logging.getLogger(__name__)

RECORD_COLUMNS = [
    "model", "conversation_id", "turn_index", "repetition",
    "prompt_tokens", "prefill_ms", "generated_tokens", "decode_ms", "total_ms",
    "prefill_tps", "decode_tps", "finish_reason", "error", "started_at",
]


@dataclass(frozen=True)
class RunConfig:
    models: tuple[str, ...]
    dataset_path: str | None = None
    repetitions: int = 3
    max_new_tokens: int = 500
    warmup_requests: int = 1
    seed: int = 0
    monitor_resources: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.warmup_requests < 0:
            raise ValueError("warmup_requests must be >= 0")
        if not self.models:
            raise ValueError("at least one model is required")


@dataclass(frozen=True)
class RunRecord:
    model: str
    conversation_id: str
    turn_index: int  # 1-based
    repetition: int  # 1-based
    timing: PhaseTiming
    throughput: ThroughputSample | None
    started_at: datetime
    finish_reason: FinishReason
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None or self.finish_reason is FinishReason.BACKEND_ERROR


@dataclass(frozen=True)
class ModelReport:
    prefill_tps: AggregateStats | None
    decode_tps: AggregateStats | None
    prefill_ms_per_token: AggregateStats | None
    decode_ms_per_token: AggregateStats | None
    total_ms_per_token: AggregateStats | None
    total_time_s: AggregateStats | None
    prefill_share: float | None
    decode_share: float | None
    cv: CVReport
    record_count: int
    failed_records: int
    resources: ResourceSummary | None = None
    accuracy: float | None = None
    error: str | None = None


@dataclass(frozen=True)
class Report:
    per_model: dict[str, ModelReport]
    dataset_stats: DatasetStats | None
    config: dict
    tool_version: str = __version__


def _throughput_sample(timing: PhaseTiming) -> ThroughputSample:
    prefill = (throughput(timing.prompt_tokens, timing.prefill_ms)
               if timing.prefill_ms > 0 else None)
    decode = (throughput(timing.generated_tokens, timing.decode_ms)
              if timing.generated_tokens > 0 and timing.decode_ms > 0 else None)
    return ThroughputSample(prefill_tps=prefill, decode_tps=decode)


def _record(model: str, conv_id: str, turn: int, rep: int,
            result: CompletionResult, started_at: datetime,
            error: str | None = None) -> RunRecord:
    failed = error is not None or result.finish_reason is FinishReason.BACKEND_ERROR
    return RunRecord(
        model=model,
        conversation_id=conv_id,
        turn_index=turn,
        repetition=rep,
        timing=result.timing,
        throughput=None if failed else _throughput_sample(result.timing),
        started_at=started_at,
        finish_reason=result.finish_reason,
        error=error if error is not None else (
            "backend_unavailable"
            if result.finish_reason is FinishReason.BACKEND_ERROR else None
        ),
    )


def replay(config: RunConfig, gateway: Gateway,
           conversations: list[Conversation] | None = None) -> list[RunRecord]:
    """Replay every conversation through the gateway per the run protocol.

    Record cardinality is exactly models x repetitions x total turns; failed
    requests are recorded and the run continues. If more than half of a
    model's records fail, ModelRunFailed is raised after the full run with
    the collected records attached.
    """
    if conversations is None:
        if config.dataset_path is None:
            raise ValueError("RunConfig.dataset_path or conversations required")
        conversations = load_dataset(config.dataset_path)
    for name in config.models:
        gateway.registry.get(name)  # raises ModelNotFound early

    records: list[RunRecord] = []
    failed_models: list[str] = []
    for model in config.models:
        warmup_text = conversations[0].turns[0]
        for _ in range(config.warmup_requests):
            gateway.chat(ChatRequest(
                model=model,
                messages=(Message(Role.USER, warmup_text),),
                max_new_tokens=config.max_new_tokens,
                request_id="warmup",
            ))
        model_records = 0
        model_failures = 0
        for rep in range(1, config.repetitions + 1):
            for conv in conversations:
                history: list[Message] = []
                for turn, user_text in enumerate(conv.turns, start=1):
                    history.append(Message(Role.USER, user_text))
                    request = ChatRequest(
                        model=model,
                        messages=tuple(history),
                        max_new_tokens=config.max_new_tokens,
                        request_id=f"{model}/{conv.id}/r{rep}/t{turn}",
                    )
                    started_at = datetime.now(timezone.utc)
                    try:
                        result = gateway.chat(request)
                        record = _record(model, conv.id, turn, rep, result, started_at)
                        history.append(Message(Role.ASSISTANT, result.text))
                    except ContextOverflow:
                        placeholder = PhaseTiming.of(
                            prompt_tokens=1, prefill_ms=0.0,
                            generated_tokens=0, decode_ms=0.0,
                        )
                        record = RunRecord(
                            model=model, conversation_id=conv.id,
                            turn_index=turn, repetition=rep,
                            timing=placeholder, throughput=None,
                            started_at=started_at,
                            finish_reason=FinishReason.BACKEND_ERROR,
                            error="context_overflow",
                        )
                        history.append(Message(Role.ASSISTANT, ""))
                    records.append(record)
                    model_records += 1
                    if record.failed:
                        model_failures += 1
        if model_records and model_failures * 2 > model_records:
            failed_models.append(model)
            logger.error("model %s: %d/%d records failed",
                         model, model_failures, model_records)
    if failed_models:
        raise ModelRunFailed(failed_models, records)
    return records


def _maybe_aggregate(values: list[float]) -> AggregateStats | None:
    return aggregate(values) if values else None


def build_report(
    records: list[RunRecord],
    resource_summaries: dict[str, ResourceSummary] | None = None,
    accuracy_results: dict[str, float] | None = None,
    stats: DatasetStats | None = None,
    config: RunConfig | dict | None = None,
) -> Report:
    """Per-model aggregates over successful records; failures are counted, not averaged."""
    if not records:
        raise EmptySample("cannot build a report from zero records")
    resource_summaries = resource_summaries or {}
    accuracy_results = accuracy_results or {}

    models: list[str] = []
    if isinstance(config, RunConfig):
        models = list(config.models)
    for rec in records:
        if rec.model not in models:
            models.append(rec.model)

    per_model: dict[str, ModelReport] = {}
    for model in models:
        mine = [r for r in records if r.model == model]
        ok = [r for r in mine if not r.failed]
        failed = len(mine) - len(ok)
        if not ok:
            per_model[model] = ModelReport(
                prefill_tps=None, decode_tps=None,
                prefill_ms_per_token=None, decode_ms_per_token=None,
                total_ms_per_token=None, total_time_s=None,
                prefill_share=None, decode_share=None,
                cv=CVReport(), record_count=len(mine), failed_records=failed,
                resources=resource_summaries.get(model),
                accuracy=accuracy_results.get(model),
                error="no successful records" if mine else "no records",
            )
            continue
        prefill_tps = [r.throughput.prefill_tps for r in ok
                       if r.throughput and r.throughput.prefill_tps is not None]
        decode_tps = [r.throughput.decode_tps for r in ok
                      if r.throughput and r.throughput.decode_tps is not None]
        prefill_per_tok = [per_token_time(r.timing.prefill_ms, r.timing.prompt_tokens)
                           for r in ok]
        decode_per_tok = [per_token_time(r.timing.decode_ms, r.timing.generated_tokens)
                          for r in ok if r.timing.generated_tokens > 0]
        # total time amortized over generated tokens: prefill cost rides on output
        total_per_tok = [per_token_time(r.timing.total_ms, r.timing.generated_tokens)
                         for r in ok if r.timing.generated_tokens > 0]
        total_s = [r.timing.total_ms / 1000.0 for r in ok]
        prefill_ms_sum = sum(r.timing.prefill_ms for r in ok)
        total_ms_sum = sum(r.timing.total_ms for r in ok)
        if total_ms_sum > 0:
            prefill_share = prefill_ms_sum / total_ms_sum
            decode_share = (total_ms_sum - prefill_ms_sum) / total_ms_sum
        else:
            prefill_share = decode_share = None
        per_model[model] = ModelReport(
            prefill_tps=_maybe_aggregate(prefill_tps),
            decode_tps=_maybe_aggregate(decode_tps),
            prefill_ms_per_token=_maybe_aggregate(prefill_per_tok),
            decode_ms_per_token=_maybe_aggregate(decode_per_tok),
            total_ms_per_token=_maybe_aggregate(total_per_tok),
            total_time_s=_maybe_aggregate(total_s),
            prefill_share=prefill_share,
            decode_share=decode_share,
            cv=cv_by_turn(ok),
            record_count=len(mine),
            failed_records=failed,
            resources=resource_summaries.get(model),
            accuracy=accuracy_results.get(model),
        )

    if isinstance(config, RunConfig):
        config_echo = {
            "models": list(config.models),
            "dataset_path": config.dataset_path,
            "repetitions": config.repetitions,
            "max_new_tokens": config.max_new_tokens,
            "warmup_requests": config.warmup_requests,
            "seed": config.seed,
            "monitor_resources": config.monitor_resources,
        }
    else:
        config_echo = dict(config) if config else {}
    return Report(per_model=per_model, dataset_stats=stats, config=config_echo)


# --- serialization --------------------------------------------------------

def _stats_to_json(stats: AggregateStats | None) -> dict | None:
    if stats is None:
        return None
    return {"n": stats.n, "mean": stats.mean, "std": stats.std,
            "min": stats.min, "max": stats.max}


def report_to_json(report: Report) -> dict:
    doc: dict = {
        "tool": {"name": "edgellm", "version": report.tool_version},
        "config": report.config,
        "models": {},
    }
    if report.dataset_stats is not None:
        ds = report.dataset_stats
        doc["dataset"] = {
            "conversation_count": ds.conversation_count,
            "turn_count": ds.turn_count,
            "prompt_word_mean": ds.prompt_word_mean,
            "prompt_word_std": ds.prompt_word_std,
            "prompt_word_min": ds.prompt_word_min,
            "prompt_word_max": ds.prompt_word_max,
        }
    for model, mr in report.per_model.items():
        entry: dict = {
            "prefill_tps": _stats_to_json(mr.prefill_tps),
            "decode_tps": _stats_to_json(mr.decode_tps),
            "prefill_ms_per_token": _stats_to_json(mr.prefill_ms_per_token),
            "decode_ms_per_token": _stats_to_json(mr.decode_ms_per_token),
            "total_ms_per_token": _stats_to_json(mr.total_ms_per_token),
            "total_time_s": _stats_to_json(mr.total_time_s),
            "phase_share": (
                {"prefill": mr.prefill_share, "decode": mr.decode_share}
                if mr.prefill_share is not None else None
            ),
            "cv_by_turn": [
                {"turn": e.turn, "phase": e.phase.value, "cv": e.cv, "n": e.n}
                for e in mr.cv.entries
            ],
            "record_count": mr.record_count,
            "failed_records": mr.failed_records,
            "accuracy": mr.accuracy,
        }
        if mr.error is not None:
            entry["error"] = mr.error
        if mr.resources is not None:
            res = mr.resources
            entry["resources"] = {
                "cpu_total_fraction": _stats_to_json(res.cpu),
                "rss_bytes": _stats_to_json(res.rss),
                "peak_rss_bytes": res.peak_rss_bytes,
                "duration_s": res.duration_s,
                "sample_count": res.sample_count,
            }
        else:
            entry["resources"] = None
        doc["models"][model] = entry
    return doc


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit(report: Report, records: list[RunRecord], out_dir: str | Path,
         formats: tuple[str, ...] = ("json", "csv")) -> dict[str, Path]:
    """Write report.json plus records.csv/summary.csv (LF endings, UTF-8)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths: dict[str, Path] = {}
        if "json" in formats:
            path = out / "report.json"
            payload = json.dumps(report_to_json(report), indent=2, sort_keys=True)
            path.write_text(payload + "\n", encoding="utf-8", newline="\n")
            paths["report"] = path
        if "csv" in formats:
            rec_path = out / "records.csv"
            with open(rec_path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(RECORD_COLUMNS)
                for r in records:
                    tps = r.throughput
                    writer.writerow([
                        r.model, r.conversation_id, r.turn_index, r.repetition,
                        r.timing.prompt_tokens, _format_cell(r.timing.prefill_ms),
                        r.timing.generated_tokens, _format_cell(r.timing.decode_ms),
                        _format_cell(r.timing.total_ms),
                        _format_cell(tps.prefill_tps if tps else None),
                        _format_cell(tps.decode_tps if tps else None),
                        r.finish_reason.value, _format_cell(r.error),
                        r.started_at.isoformat(),
                    ])
            paths["records"] = rec_path

            sum_path = out / "summary.csv"
            with open(sum_path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow([
                    "model", "records", "failed",
                    "prefill_tps_mean", "prefill_tps_std",
                    "decode_tps_mean", "decode_tps_std",
                    "prefill_ms_per_token_mean", "decode_ms_per_token_mean",
                    "total_ms_per_token_mean", "total_time_s_mean", "accuracy",
                ])
                for model, mr in report.per_model.items():
                    writer.writerow([
                        model, mr.record_count, mr.failed_records,
                        _format_cell(mr.prefill_tps.mean if mr.prefill_tps else None),
                        _format_cell(mr.prefill_tps.std if mr.prefill_tps else None),
                        _format_cell(mr.decode_tps.mean if mr.decode_tps else None),
                        _format_cell(mr.decode_tps.std if mr.decode_tps else None),
                        _format_cell(mr.prefill_ms_per_token.mean
                                     if mr.prefill_ms_per_token else None),
                        _format_cell(mr.decode_ms_per_token.mean
                                     if mr.decode_ms_per_token else None),
                        _format_cell(mr.total_ms_per_token.mean
                                     if mr.total_ms_per_token else None),
                        _format_cell(mr.total_time_s.mean
                                     if mr.total_time_s else None),
                        _format_cell(mr.accuracy),
                    ])
            paths["summary"] = sum_path
        return paths
    except OSError as exc:
        raise IoError(f"cannot write to {out}: {exc}") from exc


def load_records(path: str | Path) -> list[RunRecord]:
    """Read records.csv back, re-deriving and checking throughput consistency."""
    records: list[RunRecord] = []
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        for row_number, row in enumerate(reader, start=2):
            timing = PhaseTiming.of(
                prompt_tokens=int(row["prompt_tokens"]),
                prefill_ms=float(row["prefill_ms"]),
                generated_tokens=int(row["generated_tokens"]),
                decode_ms=float(row["decode_ms"]),
            )
            if abs(timing.total_ms - float(row["total_ms"])) > 1e-9 * max(
                    1.0, abs(timing.total_ms)):
                raise IoError(f"{path}:{row_number}: total_ms inconsistent")
            error = row["error"] or None
            failed = error is not None or row["finish_reason"] == "backend_error"
            stored = ThroughputSample(
                prefill_tps=float(row["prefill_tps"]) if row["prefill_tps"] else None,
                decode_tps=float(row["decode_tps"]) if row["decode_tps"] else None,
            ) if not failed else None
            if stored is not None:
                expected = _throughput_sample(timing)
                for got, want in ((stored.prefill_tps, expected.prefill_tps),
                                  (stored.decode_tps, expected.decode_tps)):
                    if (got is None) != (want is None):
                        raise IoError(f"{path}:{row_number}: throughput inconsistent")
                    if got is not None and abs(got - want) > 1e-9 * max(1.0, abs(want)):
                        raise IoError(f"{path}:{row_number}: throughput inconsistent")
            records.append(RunRecord(
                model=row["model"],
                conversation_id=row["conversation_id"],
                turn_index=int(row["turn_index"]),
                repetition=int(row["repetition"]),
                timing=timing,
                throughput=stored,
                started_at=datetime.fromisoformat(row["started_at"]),
                finish_reason=FinishReason(row["finish_reason"]),
                error=error,
            ))
    return records
