"""Backend adapters behind a uniform complete/score/probe contract.

Two implementations: a client for llama.cpp-server-style HTTP completion
endpoints, and a deterministic simulator whose per-token pacing and jitter
are fully reproducible from its seed. Adapters are stateless per call and
safe for concurrent use; the simulator derives each call's random stream
from (seed, request ordinal) so concurrent calls never share generator
state.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import random
import threading
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator

import httpx

from .errors import BackendUnavailable, CapabilityMissing, ProtocolError
from .registry import BackendKind, ClockMode, SimConfig

if TYPE_CHECKING:
    from .registry import BackendEndpoint

logger = logging.getLogger(__name__)

PROBE_TIMEOUT_S = 2.0
COMPLETION_TIMEOUT_S = 300.0


@dataclass
class BackendTimings:
    """Per-phase token counts and durations as reported by the backend itself."""

    prompt_tokens: int
    prompt_ms: float
    generated_tokens: int
    generation_ms: float

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.generated_tokens < 0:
            raise ValueError("token counts must be >= 0")
        for ms in (self.prompt_ms, self.generation_ms):
            if not math.isfinite(ms) or ms < 0:
                raise ValueError("durations must be finite and >= 0")


@dataclass(frozen=True)
class ScoreRequest:
    context: str
    continuation: str

    def __post_init__(self):
        if not self.continuation:
            raise ValueError("continuation must be non-empty")


@dataclass(frozen=True)
class ProbeResult:
    alive: bool
    reported_model: str | None = None


@dataclass
class Completion:
    """Handle over an in-flight completion.

    ``tokens`` yields text fragments in backend emission order. The
    remaining fields are populated once the iterator is exhausted;
    ``timings`` stays None when the backend reported none (or reported a
    malformed block, in which case ``protocol_error`` says why).
    """

    tokens: Iterator[str] = field(default_factory=lambda: iter(()))
    timings: BackendTimings | None = None
    stopped_by_limit: bool = False
    protocol_error: str | None = None


def whitespace_tokens(text: str) -> int:
    """Word count by whitespace splitting: the gateway-side token estimate."""
    return len(text.split())


def context_hash(context: str) -> str:
    return hashlib.sha256(context.encode("utf-8")).hexdigest()


def _derive_seed(seed: int, ordinal: int) -> int:
    payload = f"{seed}:{ordinal}".encode("ascii")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


def _phase_total_ms(per_token_ms: float, tokens: int) -> float:
    """Total duration of ``tokens`` steps at a constant per-token rate.

    Prefers the float whose division by ``tokens`` recovers ``per_token_ms``
    bit-exactly; all candidates are within one ulp of the true product.
    """
    if tokens == 0:
        return 0.0
    total = per_token_ms * tokens
    if total / tokens == per_token_ms:
        return total
    for cand in (math.nextafter(total, math.inf), math.nextafter(total, -math.inf)):
        if cand / tokens == per_token_ms:
            return cand
    return total


class SimulatedBackend:
    """Deterministic token generator with configurable per-token pacing.

    Injected clock mode reports timings without sleeping so suites run in
    milliseconds; wall mode sleeps for every sampled per-token duration.
    """

    kind = BackendKind.SIMULATED

    def __init__(self, config: SimConfig, seed_offset: int = 0):
        self.config = config
        self._seed = config.seed ^ seed_offset
        self._ordinal = itertools.count()
        self._lock = threading.Lock()

    def complete(self, prompt: str, max_new_tokens: int) -> Completion:
        if max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        with self._lock:
            ordinal = next(self._ordinal)
        cfg = self.config
        prompt_tokens = whitespace_tokens(prompt)
        budget = max_new_tokens
        if cfg.stop_after_tokens is not None:
            budget = min(budget, cfg.stop_after_tokens)
        handle = Completion()

        def generate() -> Iterator[str]:
            rng = random.Random(_derive_seed(self._seed, ordinal))
            if cfg.jitter_sigma_ms == 0:
                prompt_ms = _phase_total_ms(cfg.prefill_ms_per_token, prompt_tokens)
            else:
                prompt_ms = math.fsum(
                    self._token_ms(cfg.prefill_ms_per_token, rng)
                    for _ in range(prompt_tokens)
                )
            if cfg.clock is ClockMode.WALL and prompt_ms > 0:
                time.sleep(prompt_ms / 1000.0)
            decode_parts = []
            for i in range(budget):
                step_ms = self._token_ms(cfg.decode_ms_per_token, rng)
                decode_parts.append(step_ms)
                if cfg.clock is ClockMode.WALL:
                    time.sleep(step_ms / 1000.0)
                yield f"tok{i}" if i == 0 else f" tok{i}"
            if cfg.jitter_sigma_ms == 0:
                generation_ms = _phase_total_ms(cfg.decode_ms_per_token, budget)
            else:
                generation_ms = math.fsum(decode_parts)
            handle.timings = BackendTimings(
                prompt_tokens=prompt_tokens,
                prompt_ms=prompt_ms,
                generated_tokens=budget,
                generation_ms=generation_ms,
            )
            handle.stopped_by_limit = budget == max_new_tokens

        handle.tokens = generate()
        return handle

    def _token_ms(self, base_ms: float, rng: random.Random) -> float:
        # sigma == 0 stays bit-exact: the RNG is never consulted
        sigma = self.config.jitter_sigma_ms
        if sigma == 0:
            return base_ms
        return max(0.0, base_ms + rng.gauss(0.0, sigma))

    def score(self, req: ScoreRequest) -> float:
        """Cumulative natural-log likelihood of continuation given context.

        Table-driven when the config carries an explicit entry; the default
        model charges -1.0 per whitespace token, which makes scores additive
        over concatenated continuations.
        """
        table = self.config.ll_table
        if table is not None:
            entry = table.get(context_hash(req.context))
            if entry is not None and req.continuation in entry:
                return float(entry[req.continuation])
        return -1.0 * whitespace_tokens(req.continuation)

    def probe(self) -> ProbeResult:
        return ProbeResult(alive=True, reported_model=None)


class HttpCompletionBackend:
    """Client for a llama.cpp-server-style streaming completion endpoint.

    Issues ``POST <base>/completion`` with streaming enabled, relays
    ``data:`` chunks in order, and extracts the final chunk's timings block
    when present. The timings block is treated as optional because field
    names vary across server versions; a malformed block downgrades to
    wall-clock measurement at the gateway instead of failing the request.
    """

    kind = BackendKind.HTTP_COMPLETION

    def __init__(self, base_url: str, timeout_s: float = COMPLETION_TIMEOUT_S):
        self.base_url = base_url.rstrip("/")
        self._timeout = timeout_s

    def complete(self, prompt: str, max_new_tokens: int) -> Completion:
        if max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        handle = Completion()
        payload = {
            "prompt": prompt,
            "n_predict": max_new_tokens,
            "stream": True,
            "cache_prompt": False,
        }

        def generate() -> Iterator[str]:
            try:
                with httpx.Client(timeout=self._timeout) as client:
                    with client.stream(
                        "POST", f"{self.base_url}/completion", json=payload
                    ) as response:
                        if response.status_code != 200:
                            raise BackendUnavailable(
                                f"backend returned HTTP {response.status_code}"
                            )
                        for line in response.iter_lines():
                            if not line.startswith("data: "):
                                continue
                            chunk = _parse_chunk(line[len("data: "):])
                            if chunk is None:
                                continue
                            content = chunk.get("content", "")
                            if content:
                                yield content
                            if chunk.get("stop"):
                                self._finish(handle, chunk)
                                return
            except httpx.HTTPError as exc:
                raise BackendUnavailable(f"backend IO failure: {exc}") from exc

        handle.tokens = generate()
        return handle

    @staticmethod
    def _finish(handle: Completion, chunk: dict) -> None:
        handle.stopped_by_limit = bool(chunk.get("stopped_limit", False))
        raw = chunk.get("timings")
        if raw is None:
            return
        try:
            handle.timings = BackendTimings(
                prompt_tokens=int(raw["prompt_n"]),
                prompt_ms=float(raw["prompt_ms"]),
                generated_tokens=int(raw["predicted_n"]),
                generation_ms=float(raw["predicted_ms"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            handle.protocol_error = f"malformed timings block: {exc}"
            logger.warning("dropping unusable backend timings: %s", exc)

    def score(self, req: ScoreRequest) -> float:
        raise CapabilityMissing(
            "HTTP completion backends expose no token-logprob facility; "
            "scoring requires a simulated backend"
        )

    def probe(self) -> ProbeResult:
        try:
            with httpx.Client(timeout=PROBE_TIMEOUT_S) as client:
                health = client.get(f"{self.base_url}/health")
                if health.status_code != 200:
                    return ProbeResult(alive=False)
                reported = None
                try:
                    models = client.get(f"{self.base_url}/v1/models")
                    if models.status_code == 200:
                        data = models.json().get("data", [])
                        if data:
                            reported = data[0].get("id")
                except (httpx.HTTPError, json.JSONDecodeError):
                    pass
                return ProbeResult(alive=True, reported_model=reported)
        except httpx.HTTPError:
            return ProbeResult(alive=False)


def _parse_chunk(raw: str) -> dict | None:
    raw = raw.strip()
    if not raw or raw == "[DONE]":
        return None
    try:
        parsed = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"unparseable stream chunk: {raw[:80]!r}") from exc
    if not isinstance(parsed, dict):
        raise ProtocolError("stream chunk must be a JSON object")
    return parsed


Backend = SimulatedBackend | HttpCompletionBackend


def make_backend(endpoint: "BackendEndpoint", seed_offset: int = 0) -> Backend:
    """Instantiate the adapter matching an endpoint description."""
    if endpoint.kind is BackendKind.SIMULATED:
        return SimulatedBackend(endpoint.sim, seed_offset=seed_offset)
    return HttpCompletionBackend(endpoint.url)
