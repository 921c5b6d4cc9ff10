"""Fill-in-the-blank realization and log-likelihood argmax evaluation."""

from __future__ import annotations

import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgellm.accuracy import (
    EvalResult,
    MCItem,
    evaluate,
    load_items,
    realize_option,
    result_to_json,
)
from edgellm.backends import ScoreRequest, SimulatedBackend, context_hash
from edgellm.errors import CapabilityMissing, MalformedItem
from edgellm.registry import SimConfig


def item(id="it-1", sentence="The cup fell because _ was heavy.",
         options=("it", "the table"), answer=0):
    return MCItem(id=id, sentence=sentence, options=options, answer_index=answer)


class TableBackend:
    """Score table keyed by (context, continuation); anything else fails."""

    def __init__(self, table):
        self.table = table

    def score(self, req: ScoreRequest) -> float:
        return self.table[(req.context, req.continuation)]


class TestRealizeOption:
    def test_mid_sentence_blank(self):
        context, continuation = realize_option(item(), 0)
        assert context == "The cup fell because "
        assert continuation == "it was heavy."

    def test_blank_at_start(self):
        context, continuation = realize_option(
            item(sentence="_ was the only option left.", options=("Giving up", "Tea")),
            1)
        assert context == ""
        assert continuation == "Tea was the only option left."

    def test_two_blanks_rejected(self):
        with pytest.raises(MalformedItem):
            item(sentence="_ and _ are both blanks.")

    def test_no_blank_rejected(self):
        with pytest.raises(MalformedItem):
            item(sentence="no blank here.")

    def test_identical_options_rejected(self):
        with pytest.raises(MalformedItem):
            item(options=("same", "same"))


class TestEvaluate:
    def test_argmax_picks_higher_ll(self):
        it = item()
        backend = TableBackend({
            realize_option(it, 0): -5.2,
            realize_option(it, 1): -7.1,
        })
        result = evaluate([it], backend)
        assert result.per_item[0].chosen_index == 0
        assert result.correct == 1 and result.total == 1

    def test_accuracy_ratio(self):
        items = [item(id=f"it-{i}", sentence=f"Case {i} shows _ clearly.", answer=0)
                 for i in range(4)]
        table = {}
        for i, it in enumerate(items):
            right, wrong = realize_option(it, 0), realize_option(it, 1)
            # three scored toward the answer, one away from it
            table[right] = -1.0 if i < 3 else -9.0
            table[wrong] = -5.0
        result = evaluate(items, TableBackend(table))
        assert result.accuracy == 0.75

    def test_tie_breaks_to_lower_index(self):
        it = item(answer=1)
        table = {realize_option(it, 0): -3.0, realize_option(it, 1): -3.0}
        result = evaluate([it], TableBackend(table))
        assert result.per_item[0].chosen_index == 0
        assert result.correct == 0

    def test_unscored_items_excluded_from_denominator(self):
        good = item(id="good")
        bad = item(id="bad", sentence="Nothing resolves _ here.",
                   options=("xx", "yy"))
        table = {realize_option(good, 0): -1.0, realize_option(good, 1): -2.0}
        result = evaluate([good, bad], TableBackend(table))
        assert result.total == 1
        assert result.unscored == ("bad",)
        assert result.accuracy == 1.0

    def test_capability_missing_aborts(self):
        class NoScore:
            def score(self, req):
                raise CapabilityMissing("no scoring here")

        with pytest.raises(CapabilityMissing):
            evaluate([item()], NoScore())

    def test_always_right_and_always_wrong_tables(self):
        items = [item(id=f"it-{i}", sentence=f"Trial {i} proves _ again.",
                      answer=i % 2) for i in range(10)]
        favor_answer, favor_other = {}, {}
        for it in items:
            answer_key = realize_option(it, it.answer_index)
            other_key = realize_option(it, 1 - it.answer_index)
            favor_answer[answer_key], favor_answer[other_key] = -1.0, -9.0
            favor_other[answer_key], favor_other[other_key] = -9.0, -1.0
        assert evaluate(items, TableBackend(favor_answer)).accuracy == 1.0
        assert evaluate(items, TableBackend(favor_other)).accuracy == 0.0

    def test_permutation_invariant_accuracy(self):
        items = [item(id=f"it-{i}", sentence=f"Round {i} needs _ badly.",
                      answer=i % 2) for i in range(8)]
        table = {}
        for i, it in enumerate(items):
            table[realize_option(it, 0)] = -1.0 - i
            table[realize_option(it, 1)] = -2.0
        forward = evaluate(items, TableBackend(table))
        backward = evaluate(list(reversed(items)), TableBackend(table))
        assert forward.accuracy == backward.accuracy
        assert forward.per_item == backward.per_item  # sorted by id

    @given(ll_a=st.floats(min_value=-20, max_value=0),
           delta=st.floats(min_value=0.01, max_value=20),
           shift=st.floats(min_value=-50, max_value=50),
           answer_first=st.booleans())
    def test_argmax_shift_invariance(self, ll_a, delta, shift, answer_first):
        lls = (ll_a, ll_a - delta) if answer_first else (ll_a - delta, ll_a)
        it = item()
        base = TableBackend({realize_option(it, 0): lls[0],
                             realize_option(it, 1): lls[1]})
        shifted = TableBackend({realize_option(it, 0): lls[0] + shift,
                                realize_option(it, 1): lls[1] + shift})
        chosen_base = evaluate([it], base).per_item[0].chosen_index
        chosen_shifted = evaluate([it], shifted).per_item[0].chosen_index
        assert chosen_base == chosen_shifted


class TestSimulatedScoring:
    def test_table_driven_sim_backend(self):
        it = item()
        context, right = realize_option(it, 0)[0], realize_option(it, 0)[1]
        wrong = realize_option(it, 1)[1]
        backend = SimulatedBackend(SimConfig(
            prefill_ms_per_token=1.0, decode_ms_per_token=1.0,
            ll_table={context_hash(context): {right: -2.0, wrong: -8.0}}))
        result = evaluate([it], backend)
        assert result.accuracy == 1.0
        assert result.per_item[0].option_lls == (-2.0, -8.0)

    def test_default_model_prefers_shorter_continuation(self):
        # with -1 per word, the shorter option wins regardless of the label
        it = item(options=("it", "the wobbly table"), answer=1)
        backend = SimulatedBackend(SimConfig(
            prefill_ms_per_token=1.0, decode_ms_per_token=1.0))
        result = evaluate([it], backend)
        assert result.per_item[0].chosen_index == 0
        assert result.accuracy == 0.0


class TestLoadItems:
    def test_jsonl_round_trip(self, tmp_path):
        path = tmp_path / "items.jsonl"
        rows = [
            {"id": "q1", "sentence": "Pick _ now.", "option1": "this",
             "option2": "that", "answer": "2"},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows), encoding="utf-8")
        (loaded,) = load_items(path)
        assert loaded.options == ("this", "that")
        assert loaded.answer_index == 1

    def test_result_serialization(self):
        it = item()
        table = {realize_option(it, 0): -1.0, realize_option(it, 1): -2.0}
        doc = result_to_json(evaluate([it], TableBackend(table)))
        assert doc["accuracy"] == 1.0
        assert doc["per_item"][0]["option_lls"] == [-1.0, -2.0]
