"""Replay protocol, report aggregation vs brute-force oracle, and file emission."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from edgellm.bench import (
    RunConfig,
    RunRecord,
    build_report,
    emit,
    load_records,
    replay,
    report_to_json,
)
from edgellm.dataset import Conversation, dataset_stats
from edgellm.errors import ModelNotFound, ModelRunFailed
from edgellm.gateway import FinishReason, Gateway
from edgellm.registry import load_registry


def sim_registry(models, jitter=0.0, seed=0, clock="injected"):
    return load_registry({"models": [
        {
            "name": name,
            "params_billions": params,
            "quantization": "Q4_K_M",
            "backend": {"kind": "sim", "sim": {
                "prefill_ms_per_token": prefill,
                "decode_ms_per_token": decode,
                "jitter_sigma_ms": jitter,
                "seed": seed,
                "clock": clock,
            }},
            "max_context_tokens": 100_000,
        }
        for name, params, prefill, decode in models
    ]})


TWO_MODELS = [("Yi", 1.48, 13.79, 5.0), ("Gemma", 2.61, 82.02, 238.93)]


def small_conversations(count=2, turns=5):
    return [
        Conversation(
            id=f"conv-{c}",
            turns=tuple(f"turn {t} of conversation {c} asks something"
                        for t in range(turns)),
        )
        for c in range(count)
    ]


def run_small(models=TWO_MODELS, reps=3, convs=2, turns=5, max_new=8, **kw):
    registry = sim_registry(models, **kw)
    config = RunConfig(models=tuple(m[0] for m in models), repetitions=reps,
                       max_new_tokens=max_new)
    gateway = Gateway(registry, seed_offset=config.seed)
    return replay(config, gateway, small_conversations(convs, turns)), config


class TestReplay:
    def test_cardinality_product(self):
        records, _ = run_small(reps=3, convs=2, turns=5)
        assert len(records) == 2 * 3 * 2 * 5

    def test_default_repetitions_is_three(self):
        assert RunConfig(models=("Yi",)).repetitions == 3

    def test_zero_jitter_repetitions_identical(self):
        records, _ = run_small()
        by_key = {}
        for r in records:
            by_key.setdefault((r.model, r.conversation_id, r.turn_index), []).append(r)
        for group in by_key.values():
            assert len(group) == 3
            assert group[0].timing == group[1].timing == group[2].timing

    def test_context_monotonicity(self):
        records, _ = run_small()
        by_run = {}
        for r in records:
            by_run.setdefault((r.model, r.conversation_id, r.repetition), []).append(r)
        for group in by_run.values():
            group.sort(key=lambda r: r.turn_index)
            prompts = [r.timing.prompt_tokens for r in group]
            assert all(a < b for a, b in zip(prompts, prompts[1:]))

    def test_unresolvable_model_rejected_before_run(self):
        registry = sim_registry(TWO_MODELS)
        config = RunConfig(models=("Nope",))
        with pytest.raises(ModelNotFound):
            replay(config, Gateway(registry), small_conversations())

    def test_failure_threshold_raises_with_records(self):
        class FailingAdapter:
            def complete(self, prompt, max_new_tokens):
                from edgellm.backends import Completion
                from edgellm.errors import BackendUnavailable

                def gen():
                    raise BackendUnavailable("down")
                    yield  # pragma: no cover

                return Completion(tokens=gen())

        registry = sim_registry(TWO_MODELS)
        gateway = Gateway(registry)
        gateway._adapters["Yi"] = FailingAdapter()
        config = RunConfig(models=("Yi", "Gemma"), repetitions=1, max_new_tokens=4)
        with pytest.raises(ModelRunFailed) as excinfo:
            replay(config, gateway, small_conversations())
        err = excinfo.value
        assert err.failed_models == ["Yi"]
        assert len(err.records) == 2 * 1 * 2 * 5
        yi_records = [r for r in err.records if r.model == "Yi"]
        assert all(r.finish_reason is FinishReason.BACKEND_ERROR for r in yi_records)
        gemma = [r for r in err.records if r.model == "Gemma"]
        assert all(not r.failed for r in gemma)

    def test_replay_deterministic_with_jitter(self, tmp_path):
        outputs = []
        for run_dir in ("a", "b"):
            records, config = run_small(jitter=2.0, seed=7)
            report = build_report(records, config=config)
            paths = emit(report, records, tmp_path / run_dir)
            outputs.append(paths)
        report_a = (tmp_path / "a" / "report.json").read_bytes()
        report_b = (tmp_path / "b" / "report.json").read_bytes()
        assert report_a == report_b

        def rows_without_timestamp(path):
            with open(path, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                header = next(reader)
                drop = header.index("started_at")
                return [tuple(cell for i, cell in enumerate(row) if i != drop)
                        for row in reader]

        assert (rows_without_timestamp(tmp_path / "a" / "records.csv")
                == rows_without_timestamp(tmp_path / "b" / "records.csv"))


def brute_force_model_stats(records, model):
    """Oracle: recompute per-model aggregates with numpy from raw records."""
    ok = [r for r in records if r.model == model and not r.failed]
    out = {}

    def agg(values):
        arr = np.asarray(values, dtype=float)
        return {"n": len(values), "mean": float(arr.mean()), "std": float(arr.std()),
                "min": float(arr.min()), "max": float(arr.max())}

    out["prefill_ms_per_token"] = agg(
        [r.timing.prefill_ms / r.timing.prompt_tokens for r in ok])
    out["decode_ms_per_token"] = agg(
        [r.timing.decode_ms / r.timing.generated_tokens for r in ok
         if r.timing.generated_tokens > 0])
    out["prefill_tps"] = agg(
        [1000.0 * r.timing.prompt_tokens / r.timing.prefill_ms for r in ok
         if r.timing.prefill_ms > 0])
    out["decode_tps"] = agg(
        [1000.0 * r.timing.generated_tokens / r.timing.decode_ms for r in ok
         if r.timing.generated_tokens > 0 and r.timing.decode_ms > 0])
    out["total_time_s"] = agg([r.timing.total_ms / 1000.0 for r in ok])

    cv = {}
    turns = sorted({r.turn_index for r in ok})
    for turn in turns:
        bucket = [r for r in ok if r.turn_index == turn]
        for phase, values in (
            ("prefill", [1000.0 * r.timing.prompt_tokens / r.timing.prefill_ms
                         for r in bucket if r.timing.prefill_ms > 0]),
            ("decode", [1000.0 * r.timing.generated_tokens / r.timing.decode_ms
                        for r in bucket
                        if r.timing.generated_tokens > 0 and r.timing.decode_ms > 0]),
        ):
            if not values:
                continue
            arr = np.asarray(values)
            cv[(turn, phase)] = (0.0 if len(values) == 1
                                 else float(arr.std() / arr.mean()))
    out["cv"] = cv
    return out


class TestBuildReport:
    def test_recovers_prefill_fixture(self):
        records, config = run_small(models=[("Llama3", 3.21, 32.59, 10.0)])
        report = build_report(records, config=config)
        per_token = report.per_model["Llama3"].prefill_ms_per_token
        assert per_token.mean == pytest.approx(32.59, abs=0.01)

    def test_single_record_has_zero_stds(self):
        records, config = run_small(models=[("Yi", 1.48, 13.79, 5.0)],
                                    reps=1, convs=1, turns=1)
        report = build_report(records, config=config)
        model = report.per_model["Yi"]
        assert model.prefill_tps.std == 0.0
        assert model.total_time_s.std == 0.0

    def test_matches_brute_force_oracle(self):
        records, config = run_small(jitter=1.5, seed=11)
        report = build_report(records, config=config)
        for model in ("Yi", "Gemma"):
            oracle = brute_force_model_stats(records, model)
            got = report.per_model[model]
            for field_name in ("prefill_ms_per_token", "decode_ms_per_token",
                               "prefill_tps", "decode_tps", "total_time_s"):
                want = oracle[field_name]
                stats = getattr(got, field_name)
                assert stats.n == want["n"]
                assert stats.mean == pytest.approx(want["mean"], rel=1e-9)
                assert stats.std == pytest.approx(want["std"], rel=1e-9, abs=1e-9)
            got_cv = {(e.turn, e.phase.value): e.cv for e in got.cv.entries}
            assert set(got_cv) == set(oracle["cv"])
            for key, want_cv in oracle["cv"].items():
                assert got_cv[key] == pytest.approx(want_cv, rel=1e-9, abs=1e-12)

    def test_model_without_successes_reported_with_reason(self):
        records, config = run_small(models=[("Yi", 1.48, 13.79, 5.0)],
                                    reps=1, convs=1, turns=2)
        failed = [
            RunRecord(
                model="Gemma", conversation_id=r.conversation_id,
                turn_index=r.turn_index, repetition=r.repetition,
                timing=r.timing, throughput=None, started_at=r.started_at,
                finish_reason=FinishReason.BACKEND_ERROR,
                error="backend_unavailable",
            )
            for r in records
        ]
        report = build_report(records + failed)
        assert report.per_model["Gemma"].error == "no successful records"
        assert report.per_model["Gemma"].failed_records == 2
        assert report.per_model["Yi"].error is None

    def test_every_configured_model_present_once(self):
        records, config = run_small()
        report = build_report(records, config=config)
        assert list(report.per_model) == ["Yi", "Gemma"]


class TestEmit:
    def test_json_round_trip_structure(self, tmp_path):
        records, config = run_small(convs=1, turns=3)
        stats = dataset_stats(small_conversations(1, 3))
        report = build_report(records, stats=stats, config=config)
        paths = emit(report, records, tmp_path)
        loaded = json.loads(paths["report"].read_text(encoding="utf-8"))
        assert loaded == report_to_json(report)
        assert loaded["dataset"]["conversation_count"] == 1
        assert loaded["tool"]["name"] == "edgellm"

    def test_records_csv_row_count(self, tmp_path):
        records, config = run_small(convs=1, turns=2, reps=2)
        report = build_report(records, config=config)
        paths = emit(report, records, tmp_path)
        lines = paths["records"].read_text(encoding="utf-8").splitlines()
        assert len(lines) == len(records) + 1

    def test_csv_cells_are_locale_free_decimals(self, tmp_path):
        records, config = run_small(convs=1, turns=2, reps=1)
        report = build_report(records, config=config)
        paths = emit(report, records, tmp_path)
        with open(paths["records"], newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                for column in ("prefill_ms", "decode_ms", "total_ms",
                               "prefill_tps", "decode_tps"):
                    if row[column]:
                        float(row[column])  # raises on locale separators

    def test_load_records_round_trip(self, tmp_path):
        records, config = run_small(convs=2, turns=3, reps=1)
        report = build_report(records, config=config)
        paths = emit(report, records, tmp_path)
        loaded = load_records(paths["records"])
        assert len(loaded) == len(records)
        for got, want in zip(loaded, records):
            assert got.model == want.model
            assert got.timing == want.timing
            assert got.finish_reason == want.finish_reason
            assert got.turn_index == want.turn_index

    def test_report_rebuilt_from_records_file_matches(self, tmp_path):
        records, config = run_small(jitter=1.0, seed=3)
        report = build_report(records, config=config)
        paths = emit(report, records, tmp_path)
        rebuilt = build_report(load_records(paths["records"]), config=config)
        for model in ("Yi", "Gemma"):
            a, b = report.per_model[model], rebuilt.per_model[model]
            assert a.prefill_tps.mean == pytest.approx(b.prefill_tps.mean, rel=1e-12)
            assert a.decode_ms_per_token.std == pytest.approx(
                b.decode_ms_per_token.std, rel=1e-9, abs=1e-12)
