"""Conversation workload files: JSON-Lines loading and prompt-length statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .backends import whitespace_tokens
from .errors import DatasetSyntax, DuplicateConversation, EmptyPrompt, EmptySample
from .metrics import aggregate


@dataclass(frozen=True)
class Conversation:
    id: str
    turns: tuple[str, ...]


@dataclass(frozen=True)
class DatasetStats:
    conversation_count: int
    turn_count: int
    prompt_word_mean: float
    prompt_word_std: float  # population
    prompt_word_min: int
    prompt_word_max: int


def load_dataset(path: str | Path) -> list[Conversation]:
    """Load one conversation per line: ``{"id": str, "turns": [str, ...]}``."""
    conversations: list[Conversation] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetSyntax(f"invalid JSON: {exc}", line_number) from exc
            if not isinstance(doc, dict) or "id" not in doc or "turns" not in doc:
                raise DatasetSyntax("each line needs 'id' and 'turns'", line_number)
            conv_id = doc["id"]
            if not isinstance(conv_id, str) or not conv_id:
                raise DatasetSyntax("'id' must be a non-empty string", line_number)
            if conv_id in seen:
                raise DuplicateConversation(f"duplicate conversation id '{conv_id}'")
            turns = doc["turns"]
            if not isinstance(turns, list) or not turns:
                raise EmptyPrompt(
                    f"conversation '{conv_id}' has no turns (line {line_number})"
                )
            cleaned = []
            for i, turn in enumerate(turns, start=1):
                if not isinstance(turn, str) or not turn.strip():
                    raise EmptyPrompt(
                        f"conversation '{conv_id}' turn {i} is empty (line {line_number})"
                    )
                cleaned.append(turn)
            seen.add(conv_id)
            conversations.append(Conversation(id=conv_id, turns=tuple(cleaned)))
    return conversations


def dataset_stats(conversations: list[Conversation]) -> DatasetStats:
    """Word-count distribution over every user prompt (whitespace splitting)."""
    if not conversations:
        raise EmptySample("dataset has no conversations")
    counts = [whitespace_tokens(turn) for conv in conversations for turn in conv.turns]
    stats = aggregate(float(c) for c in counts)
    return DatasetStats(
        conversation_count=len(conversations),
        turn_count=len(counts),
        prompt_word_mean=stats.mean,
        prompt_word_std=stats.std,
        prompt_word_min=int(stats.min),
        prompt_word_max=int(stats.max),
    )
