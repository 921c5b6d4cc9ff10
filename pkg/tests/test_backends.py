"""Simulated backend determinism, pacing contracts, scoring, and HTTP adapter."""

from __future__ import annotations

import math
import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgellm.backends import (
    BackendTimings,
    HttpCompletionBackend,
    ScoreRequest,
    SimulatedBackend,
    context_hash,
)
from edgellm.errors import BackendUnavailable
from edgellm.registry import ClockMode, SimConfig


def sim(prefill=10.0, decode=20.0, **kw) -> SimulatedBackend:
    return SimulatedBackend(SimConfig(
        prefill_ms_per_token=prefill, decode_ms_per_token=decode, **kw))


def run(backend, prompt, max_new):
    handle = backend.complete(prompt, max_new)
    tokens = list(handle.tokens)
    return tokens, handle


TEN_WORDS = " ".join(f"w{i}" for i in range(10))


class TestSimulatedCompletion:
    def test_large_model_prefill_product(self):
        tokens, handle = run(sim(prefill=276.42), TEN_WORDS, 3)
        t = handle.timings
        assert t.prompt_tokens == 10
        assert t.prompt_ms == pytest.approx(2764.2, rel=1e-12)
        assert t.prompt_ms / t.prompt_tokens == 276.42
        assert t.generated_tokens == 3
        assert t.generation_ms / t.generated_tokens == 20.0

    def test_early_stop_dominates_budget(self):
        tokens, handle = run(sim(stop_after_tokens=2), TEN_WORDS, 500)
        assert len(tokens) == 2
        assert not handle.stopped_by_limit

    def test_budget_exhaustion(self):
        tokens, handle = run(sim(), TEN_WORDS, 5)
        assert len(tokens) == 5
        assert handle.stopped_by_limit

    def test_token_texts_join_into_words(self):
        tokens, _ = run(sim(), TEN_WORDS, 4)
        assert "".join(tokens) == "tok0 tok1 tok2 tok3"

    def test_deterministic_across_instances(self):
        config = dict(prefill=5.0, decode=7.0, jitter_sigma_ms=2.0, seed=42)
        a_tokens, a = run(sim(**config), TEN_WORDS, 8)
        b_tokens, b = run(sim(**config), TEN_WORDS, 8)
        assert a_tokens == b_tokens
        assert a.timings == b.timings

    def test_ordinal_separates_random_streams(self):
        backend = sim(jitter_sigma_ms=2.0, seed=42)
        _, first = run(backend, TEN_WORDS, 8)
        _, second = run(backend, TEN_WORDS, 8)
        assert first.timings.prompt_ms != second.timings.prompt_ms

    def test_seed_changes_jitter(self):
        _, a = run(sim(jitter_sigma_ms=2.0, seed=1), TEN_WORDS, 8)
        _, b = run(sim(jitter_sigma_ms=2.0, seed=2), TEN_WORDS, 8)
        assert a.timings.prompt_ms != b.timings.prompt_ms

    @given(tokens=st.integers(min_value=1, max_value=2000),
           rate=st.floats(min_value=0.01, max_value=1e4,
                          allow_nan=False, allow_infinity=False))
    def test_zero_jitter_per_token_recovery(self, tokens, rate):
        backend = SimulatedBackend(SimConfig(
            prefill_ms_per_token=rate, decode_ms_per_token=rate))
        prompt = " ".join(["w"] * tokens)
        _, handle = run(backend, prompt, 1)
        recovered = handle.timings.prompt_ms / tokens
        assert abs(recovered - rate) <= math.ulp(rate)

    def test_abandoned_stream_reports_no_timings(self):
        handle = sim().complete(TEN_WORDS, 50)
        taken = [next(handle.tokens) for _ in range(3)]
        handle.tokens.close()
        assert len(taken) == 3
        assert handle.timings is None  # cancelled before the final accounting

    def test_wall_clock_actually_paces(self):
        backend = sim(prefill=5.0, decode=5.0, clock=ClockMode.WALL)
        expected_ms = 10 * 5.0 + 20 * 5.0
        start = time.monotonic()
        tokens, _ = run(backend, TEN_WORDS, 20)
        elapsed_ms = (time.monotonic() - start) * 1000
        assert len(tokens) == 20
        assert elapsed_ms >= expected_ms * 0.8


class TestSimulatedScore:
    def test_default_charges_one_per_token(self):
        assert sim().score(ScoreRequest("ctx", "a b c")) == -3.0

    def test_table_lookup(self):
        h = context_hash("The cup fell because ")
        backend = SimulatedBackend(SimConfig(
            prefill_ms_per_token=1.0, decode_ms_per_token=1.0,
            ll_table={h: {"opt1": -5.2, "opt2": -7.1}},
        ))
        assert backend.score(ScoreRequest("The cup fell because ", "opt1")) == -5.2
        assert backend.score(ScoreRequest("The cup fell because ", "opt2")) == -7.1
        # untabled continuations fall back to the default model
        assert backend.score(ScoreRequest("The cup fell because ", "x y")) == -2.0

    def test_longer_continuations_score_lower(self):
        backend = sim()
        assert (backend.score(ScoreRequest("c", "a b"))
                > backend.score(ScoreRequest("c", "a b c")))

    @given(st.lists(st.text(alphabet="abc", min_size=1, max_size=5),
                    min_size=1, max_size=6),
           st.lists(st.text(alphabet="xyz", min_size=1, max_size=5),
                    min_size=1, max_size=6))
    def test_additive_over_concatenation(self, left, right):
        backend = sim()
        a, b = " ".join(left), " ".join(right)
        combined = backend.score(ScoreRequest("ctx", f"{a} {b}"))
        assert combined == (backend.score(ScoreRequest("ctx", a))
                            + backend.score(ScoreRequest("ctx", b)))

    def test_probe_always_alive(self):
        assert sim().probe().alive


# --- HTTP adapter against the llama.cpp-style stub (see conftest) ----------

class TestHttpAdapter:
    def test_relays_tokens_and_timings_verbatim(self, stub_server):
        url, config = stub_server
        backend = HttpCompletionBackend(url)
        tokens, handle = run(backend, "hi there", 16)
        assert tokens == config.tokens
        assert handle.timings == BackendTimings(
            prompt_tokens=12, prompt_ms=165.48,
            generated_tokens=4, generation_ms=955.72,
        )

    def test_malformed_timings_dropped(self, stub_server):
        url, config = stub_server
        config.timings = {"prompt_n": "not-a-number"}
        backend = HttpCompletionBackend(url)
        tokens, handle = run(backend, "hi", 16)
        assert tokens == config.tokens
        assert handle.timings is None
        assert handle.protocol_error is not None

    def test_missing_timings_block_tolerated(self, stub_server):
        url, config = stub_server
        config.timings = None
        _, handle = run(HttpCompletionBackend(url), "hi", 16)
        assert handle.timings is None
        assert handle.protocol_error is None

    def test_stop_limit_propagates(self, stub_server):
        url, config = stub_server
        config.stopped_limit = True
        _, handle = run(HttpCompletionBackend(url), "hi", 4)
        assert handle.stopped_by_limit

    def test_connection_refused(self):
        backend = HttpCompletionBackend("http://127.0.0.1:1")
        handle = backend.complete("hi", 4)
        with pytest.raises(BackendUnavailable):
            list(handle.tokens)

    def test_probe_dead_port(self):
        assert not HttpCompletionBackend("http://127.0.0.1:1").probe().alive

    def test_probe_reports_model(self, stub_server):
        url, config = stub_server
        result = HttpCompletionBackend(url).probe()
        assert result.alive
        assert result.reported_model == config.model_name
