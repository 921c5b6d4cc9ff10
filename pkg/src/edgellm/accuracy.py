"""Two-option fill-in-the-blank evaluation scored by cumulative log-likelihood.

Each item's blank is realized with both options; the option whose
continuation scores higher (conditioned on the shared prefix) is chosen.
Scores are unnormalized sums, so option length bias is accepted as-is.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .backends import ScoreRequest
from .errors import CapabilityMissing, DatasetSyntax, MalformedItem

logger = logging.getLogger(__name__)

BLANK = "_"


@dataclass(frozen=True)
class MCItem:
    id: str
    sentence: str
    options: tuple[str, str]
    answer_index: int

    def __post_init__(self):
        if self.sentence.count(BLANK) != 1:
            raise MalformedItem(
                f"item '{self.id}': sentence must contain exactly one '{BLANK}'"
            )
        if not self.options[0] or not self.options[1]:
            raise MalformedItem(f"item '{self.id}': options must be non-empty")
        if self.options[0] == self.options[1]:
            raise MalformedItem(f"item '{self.id}': options must be distinct")
        if self.answer_index not in (0, 1):
            raise MalformedItem(f"item '{self.id}': answer_index must be 0 or 1")


@dataclass(frozen=True)
class ItemOutcome:
    id: str
    chosen_index: int
    option_lls: tuple[float, float]


@dataclass(frozen=True)
class EvalResult:
    total: int
    correct: int
    accuracy: float
    per_item: tuple[ItemOutcome, ...]
    unscored: tuple[str, ...] = ()


def realize_option(item: MCItem, option_index: int) -> tuple[str, str]:
    """Split the sentence at the blank: (prefix context, option + suffix).

    The shared prefix would add an identical constant to both options'
    cumulative scores, so it is conditioned on rather than scored.
    """
    before, after = item.sentence.split(BLANK)
    return before, item.options[option_index] + after


def evaluate(items: list[MCItem], backend) -> EvalResult:
    """Choose per item the option with the higher cumulative log-likelihood.

    Ties break toward the lower index. Items whose scoring fails are
    excluded from the denominator and reported in ``unscored``.
    """
    outcomes: list[ItemOutcome] = []
    unscored: list[str] = []
    correct = 0
    for item in items:
        try:
            lls = []
            for option_index in (0, 1):
                context, continuation = realize_option(item, option_index)
                lls.append(backend.score(ScoreRequest(context, continuation)))
        except CapabilityMissing:
            raise
        except Exception as exc:
            logger.warning("item '%s' left unscored: %s", item.id, exc)
            unscored.append(item.id)
            continue
        chosen = 0 if lls[0] >= lls[1] else 1
        if chosen == item.answer_index:
            correct += 1
        outcomes.append(ItemOutcome(
            id=item.id, chosen_index=chosen, option_lls=(lls[0], lls[1])
        ))
    outcomes.sort(key=lambda o: o.id)
    total = len(outcomes)
    return EvalResult(
        total=total,
        correct=correct,
        accuracy=(correct / total) if total else 0.0,
        per_item=tuple(outcomes),
        unscored=tuple(sorted(unscored)),
    )


def load_items(path: str | Path) -> list[MCItem]:
    """JSON-Lines: ``{"id", "sentence", "option1", "option2", "answer": "1"|"2"}``."""
    items: list[MCItem] = []
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetSyntax(f"invalid JSON: {exc}", line_number) from exc
            try:
                answer = str(doc["answer"])
                if answer not in ("1", "2"):
                    raise DatasetSyntax("'answer' must be \"1\" or \"2\"", line_number)
                items.append(MCItem(
                    id=str(doc["id"]),
                    sentence=str(doc["sentence"]),
                    options=(str(doc["option1"]), str(doc["option2"])),
                    answer_index=int(answer) - 1,
                ))
            except KeyError as exc:
                raise DatasetSyntax(f"missing field {exc}", line_number) from exc
    return items


def result_to_json(result: EvalResult) -> dict:
    return {
        "total": result.total,
        "correct": result.correct,
        "accuracy": result.accuracy,
        "unscored": list(result.unscored),
        "per_item": [
            {"id": o.id, "chosen_index": o.chosen_index,
             "option_lls": list(o.option_lls)}
            for o in result.per_item
        ],
    }
