#!/usr/bin/env python3
"""Regenerate the shipped 50-dialogue replay fixture.

Produces a deterministic reconstruction of a multi-turn assistant-chat
workload: 50 conversations, at least five user turns each, prompt lengths
with a heavy-tailed distribution spanning 1 to 241 words. Output is
JSON-Lines consumable by `edgellm bench run --dataset`.
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

SEED = 20241107
CONVERSATIONS = 50
MIN_WORDS, MAX_WORDS = 1, 241

OPENERS = [
    "Can you explain", "I want to understand", "Please summarize",
    "What is the difference between", "Help me debug", "Write a short note about",
    "My team is evaluating", "Give me practical advice on", "Compare", "Describe",
]
TOPICS = [
    "container orchestration on small boards", "quantized language models",
    "token streaming over plain HTTP", "prompt caching strategies",
    "power budgets for single-board computers", "text generation latency",
    "monitoring dashboards for tiny clusters", "batch scheduling tradeoffs",
    "memory limits during inference", "chat history management",
    "network partitions in home labs", "benchmark reproducibility",
]
FILLER = (
    "and in particular how it behaves when the device is under sustained load "
    "with several clients connected because we noticed that response speed "
    "changes a lot between the first and the later answers in a session also "
    "whether the effect depends on prompt size or on accumulated history and "
    "if there is a simple way to measure it without extra hardware the setup "
    "uses four small nodes with shared storage and a flat network so every "
    "request goes through one proxy before it reaches the model container "
).split()
FOLLOWUPS = [
    "Why?", "Can you expand on that?", "Give me a concrete example please.",
    "How does that change with longer conversations?",
    "What would you measure first and what tool reports it?",
    "Now rewrite your answer as five short bullet points for a readme.",
    "Does that still hold on a machine with four slow cores?",
    "Summarize everything so far in one paragraph.",
]


def prompt_of_length(rng: random.Random, words: int) -> str:
    if words == 1:
        return "Why?"
    opener = rng.choice(OPENERS).split()
    topic = rng.choice(TOPICS).split()
    body = opener + topic
    while len(body) < words:
        body.append(FILLER[(len(body) * 7 + rng.randrange(3)) % len(FILLER)])
    return " ".join(body[:words])


def draw_length(rng: random.Random) -> int:
    length = int(round(rng.lognormvariate(2.75, 1.0)))
    return max(MIN_WORDS, min(MAX_WORDS, length))


def build(seed: int = SEED) -> list[dict]:
    rng = random.Random(seed)
    conversations = []
    for index in range(CONVERSATIONS):
        turn_count = 5 + index % 4
        turns = []
        for turn in range(turn_count):
            if turn == 0:
                turns.append(prompt_of_length(rng, draw_length(rng)))
            elif rng.random() < 0.35:
                turns.append(rng.choice(FOLLOWUPS))
            else:
                turns.append(prompt_of_length(rng, draw_length(rng)))
        conversations.append({"id": f"oasst-replay-{index:03d}", "turns": turns})
    # pin the documented range so the corpus always spans it
    conversations[7]["turns"][2] = "Why?"
    conversations[23]["turns"][1] = prompt_of_length(rng, MAX_WORDS)
    return conversations


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="datasets/oasst_replay_50.jsonl")
    parser.add_argument("--seed", type=int, default=SEED)
    args = parser.parse_args()
    rows = build(args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    lengths = [len(t.split()) for row in rows for t in row["turns"]]
    print(f"wrote {out}: {len(rows)} conversations, {len(lengths)} turns, "
          f"words min={min(lengths)} max={max(lengths)} "
          f"mean={sum(lengths) / len(lengths):.1f}")


if __name__ == "__main__":
    main()
