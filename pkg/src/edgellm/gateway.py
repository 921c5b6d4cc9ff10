"""Chat gateway: prompt assembly, backend dispatch, token streaming, timing capture.

The ``Gateway`` class is the transport-free core (used directly by the
bench runner); ``create_app`` wraps it in the HTTP surface: POST /v1/chat
(JSON or server-sent events), GET /v1/models, GET /healthz, GET /metrics.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterator, Sequence

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse

from .backends import Backend, BackendTimings, Completion, make_backend, whitespace_tokens
from .errors import (
    BackendUnavailable,
    ClockSkew,
    ContextOverflow,
    InvalidChatRequest,
    ModelNotFound,
    ProtocolError,
)
from .metrics import PhaseTiming, throughput
from .registry import BackendKind, ChatTemplate, ModelSpec, Registry

logger = logging.getLogger(__name__)

DEFAULT_MAX_NEW_TOKENS = 500


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class FinishReason(str, Enum):
    STOP = "stop"
    MAX_TOKENS = "max_tokens"
    BACKEND_ERROR = "backend_error"


@dataclass(frozen=True)
class Message:
    role: Role
    text: str


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    stream: bool = False
    request_id: str | None = None

    def __post_init__(self):
        if not self.messages:
            raise InvalidChatRequest("messages must be non-empty")
        if self.messages[-1].role is not Role.USER:
            raise InvalidChatRequest("last message must have role 'user'")
        if self.max_new_tokens < 1:
            raise InvalidChatRequest("max_new_tokens must be >= 1")


@dataclass(frozen=True)
class TokenEvent:
    index: int
    text: str
    at: int  # monotonic nanoseconds


@dataclass(frozen=True)
class CompletionResult:
    text: str
    timing: PhaseTiming
    finish_reason: FinishReason
    model: str

    def __post_init__(self):
        if (self.finish_reason is FinishReason.MAX_TOKENS
                and self.timing.generated_tokens == 0):
            raise ValueError("max_tokens finish requires generated tokens")


@dataclass(frozen=True)
class CompletionRecord:
    """What the gateway hands to an attached sink after every completion."""

    model: str
    backend_kind: BackendKind
    request_id: str | None
    started_at: datetime
    result: CompletionResult


class MemoryCompletionSink:
    """Thread-safe append-only record store; appends are serialized."""

    def __init__(self):
        self._records: list[CompletionRecord] = []
        self._lock = threading.Lock()

    def append(self, record: CompletionRecord) -> None:
        with self._lock:
            self._records.append(record)

    def drain(self) -> list[CompletionRecord]:
        with self._lock:
            records, self._records = self._records, []
            return records


def build_prompt(history: Sequence[Message],
                 template: ChatTemplate) -> tuple[str, int]:
    """Render a message history into a prompt string plus a token estimate.

    Generic renders one ``role: text`` line per message and ends with the
    ``assistant:`` cue; passthrough joins raw texts with newlines. The
    estimate counts whitespace-separated words of the rendered prompt (the
    gateway has no tokenizer; real counts come only from the backend).
    """
    if template is ChatTemplate.PASSTHROUGH:
        prompt = "\n".join(m.text for m in history)
    else:
        lines = [f"{m.role.value}: {m.text}\n" for m in history]
        prompt = "".join(lines) + "assistant:"
    return prompt, whitespace_tokens(prompt)


def derive_phase_timing(
    dispatch_at: int,
    first_token_at: int,
    last_token_at: int,
    backend_timings: BackendTimings | None,
    *,
    streamed_tokens: int,
    prompt_token_estimate: int,
) -> PhaseTiming:
    """Assemble per-phase timing, preferring the backend's own instrumentation.

    Without backend timings, time-to-first-token stands in for prefill and
    the remainder is decode; counts fall back to the gateway's stream count
    and whitespace estimate (clamped to 1: a prompt always carries at least
    one token's worth of work).
    """
    if not dispatch_at <= first_token_at <= last_token_at:
        raise ClockSkew(
            f"timestamps out of order: dispatch={dispatch_at} "
            f"first={first_token_at} last={last_token_at}"
        )
    if backend_timings is not None:
        return PhaseTiming.of(
            prompt_tokens=max(1, backend_timings.prompt_tokens),
            prefill_ms=backend_timings.prompt_ms,
            generated_tokens=backend_timings.generated_tokens,
            decode_ms=backend_timings.generation_ms,
        )
    prefill_ms = (first_token_at - dispatch_at) / 1e6
    decode_ms = (last_token_at - first_token_at) / 1e6
    if streamed_tokens == 0:
        decode_ms = 0.0
    return PhaseTiming.of(
        prompt_tokens=max(1, prompt_token_estimate),
        prefill_ms=prefill_ms,
        generated_tokens=streamed_tokens,
        decode_ms=decode_ms,
    )


@dataclass
class ChatStream:
    """In-flight chat: iterate ``events()`` fully, then read ``result``."""

    model: str
    request: ChatRequest
    _gateway: "Gateway"
    _spec: ModelSpec
    _prompt: str
    _estimate: int
    result: CompletionResult | None = None
    started_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def events(self) -> Iterator[TokenEvent]:
        adapter = self._gateway.adapter_for(self.model)
        dispatch = time.monotonic_ns()
        first = last = None
        parts: list[str] = []
        failure: Exception | None = None
        handle: Completion | None = None
        try:
            handle = adapter.complete(self._prompt, self.request.max_new_tokens)
            for index, text in enumerate(handle.tokens):
                now = time.monotonic_ns()
                if first is None:
                    first = now
                last = now
                parts.append(text)
                yield TokenEvent(index=index, text=text, at=now)
        except (BackendUnavailable, ProtocolError) as exc:
            failure = exc
            logger.warning("backend failure for %s: %s", self.model, exc)

        now = time.monotonic_ns()
        timing = derive_phase_timing(
            dispatch,
            first if first is not None else now,
            last if last is not None else now,
            None if failure else (handle.timings if handle else None),
            streamed_tokens=len(parts),
            prompt_token_estimate=self._estimate,
        )
        if failure is not None:
            finish = FinishReason.BACKEND_ERROR
        elif handle is not None and handle.stopped_by_limit:
            finish = FinishReason.MAX_TOKENS
        else:
            finish = FinishReason.STOP
        self.result = CompletionResult(
            text="".join(parts), timing=timing, finish_reason=finish, model=self.model
        )
        self._gateway._finish(self, self.result)

    def drain(self) -> CompletionResult:
        for _ in self.events():
            pass
        assert self.result is not None
        return self.result


class Gateway:
    """Routes chat requests to registered backends and records completions.

    The registry is immutable; per-request state lives in the handler. The
    sink and metrics hub are the only shared mutable collaborators and both
    serialize their own writes.
    """

    def __init__(self, registry: Registry, sink=None, metrics_hub=None,
                 seed_offset: int = 0):
        self.registry = registry
        self.sink = sink
        self.metrics = metrics_hub
        self._adapters: dict[str, Backend] = {
            spec.name: make_backend(spec.backend, seed_offset=seed_offset)
            for spec in registry.models
        }

    def adapter_for(self, model_name: str) -> Backend:
        return self._adapters[model_name]

    def list_models(self) -> list[dict]:
        return [
            {
                "name": spec.name,
                "size_class": spec.size_class.value,
                "params_billions": spec.params_billions,
                "quantization": spec.quantization,
            }
            for spec in self.registry.models
        ]

    def start_chat(self, request: ChatRequest) -> ChatStream:
        """Validate and prepare a chat; raises before any backend call."""
        spec = self.registry.get(request.model)
        prompt, estimate = build_prompt(request.messages, spec.chat_template)
        if estimate > spec.max_context_tokens:
            raise ContextOverflow(
                f"assembled prompt is ~{estimate} tokens; "
                f"'{spec.name}' accepts {spec.max_context_tokens}"
            )
        return ChatStream(
            model=request.model,
            request=request,
            _gateway=self,
            _spec=spec,
            _prompt=prompt,
            _estimate=estimate,
        )

    def chat(self, request: ChatRequest) -> CompletionResult:
        return self.start_chat(request).drain()

    def _finish(self, stream: ChatStream, result: CompletionResult) -> None:
        spec = stream._spec
        if self.sink is not None:
            self.sink.append(CompletionRecord(
                model=stream.model,
                backend_kind=spec.backend.kind,
                request_id=stream.request.request_id,
                started_at=stream.started_at,
                result=result,
            ))
        if self.metrics is not None:
            labels = {"model": stream.model, "backend_kind": spec.backend.kind.value}
            self.metrics.inc_counter("edgellm_requests_total", labels)
            timing = result.timing
            if timing.prefill_ms > 0:
                self.metrics.set_gauge(
                    "edgellm_prefill_tokens_per_second", labels,
                    throughput(timing.prompt_tokens, timing.prefill_ms),
                )
            if timing.generated_tokens > 0 and timing.decode_ms > 0:
                self.metrics.set_gauge(
                    "edgellm_decode_tokens_per_second", labels,
                    throughput(timing.generated_tokens, timing.decode_ms),
                )


# --- wire serialization -------------------------------------------------

def timing_to_wire(timing: PhaseTiming) -> dict:
    return {
        "prompt_tokens": timing.prompt_tokens,
        "prefill_ms": timing.prefill_ms,
        "generated_tokens": timing.generated_tokens,
        "decode_ms": timing.decode_ms,
        "total_ms": timing.total_ms,
    }


def result_to_wire(result: CompletionResult) -> dict:
    return {
        "text": result.text,
        "timing": timing_to_wire(result.timing),
        "finish_reason": result.finish_reason.value,
        "model": result.model,
    }


def parse_chat_body(body: dict) -> ChatRequest:
    if not isinstance(body, dict):
        raise InvalidChatRequest("request body must be a JSON object")
    model = body.get("model")
    if not isinstance(model, str) or not model:
        raise InvalidChatRequest("'model' must be a non-empty string")
    raw_messages = body.get("messages")
    if not isinstance(raw_messages, list) or not raw_messages:
        raise InvalidChatRequest("'messages' must be a non-empty list")
    messages = []
    for m in raw_messages:
        try:
            messages.append(Message(role=Role(m["role"]), text=str(m["text"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidChatRequest(f"bad message entry: {exc}") from exc
    max_new = body.get("max_new_tokens", DEFAULT_MAX_NEW_TOKENS)
    if not isinstance(max_new, int):
        raise InvalidChatRequest("'max_new_tokens' must be an integer")
    return ChatRequest(
        model=model,
        messages=tuple(messages),
        max_new_tokens=max_new,
        stream=bool(body.get("stream", False)),
        request_id=body.get("request_id"),
    )


def _sse_event(event: str, data: dict) -> str:
    return f"event: {event}\ndata: {json.dumps(data, separators=(',', ':'))}\n\n"


def create_app(gateway: Gateway):
    """FastAPI application exposing the gateway's public HTTP surface."""
    from .monitor import render_prometheus

    app = FastAPI(title="edgellm gateway", version="0.1.0")
    app.state.gateway = gateway

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/v1/models")
    def models():
        return gateway.list_models()

    @app.get("/metrics")
    def metrics():
        if gateway.metrics is None:
            return PlainTextResponse("", media_type="text/plain; version=0.0.4")
        text = render_prometheus(gateway.metrics.snapshot())
        return PlainTextResponse(text, media_type="text/plain; version=0.0.4")

    @app.post("/v1/chat")
    async def chat(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return JSONResponse({"error": "request body must be JSON"}, status_code=400)
        try:
            chat_request = parse_chat_body(body)
            stream = gateway.start_chat(chat_request)
        except InvalidChatRequest as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        except ModelNotFound as exc:
            return JSONResponse({"error": str(exc.args[0])}, status_code=404)
        except ContextOverflow as exc:
            return JSONResponse({"error": str(exc)}, status_code=413)

        if chat_request.stream:
            def sse() -> Iterator[str]:
                for event in stream.events():
                    yield _sse_event("token", {"index": event.index, "text": event.text})
                yield _sse_event("done", result_to_wire(stream.result))

            return StreamingResponse(sse(), media_type="text/event-stream")

        result = stream.drain()
        status = 502 if result.finish_reason is FinishReason.BACKEND_ERROR else 200
        return JSONResponse(result_to_wire(result), status_code=status)

    return app
