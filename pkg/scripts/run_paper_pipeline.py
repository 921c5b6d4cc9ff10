#!/usr/bin/env python3
"""Run the full desk-scale evaluation pipeline against simulated backends.

For every configured model: replay the 50-dialogue workload (3 repetitions,
500-token generation cap), sample the serving process's CPU/RSS while that
model runs, score a synthetic two-option item set with a table-driven
scorer calibrated to the model's target accuracy, and join everything into
one report (JSON + CSV) covering throughput, per-token latency, phase
shares, turn-bucketed CV, resources, and accuracy.

All numbers verify the measurement pipeline, not the models: the simulator
is parameterized with published per-token timings and target accuracies.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from edgellm.accuracy import MCItem, evaluate, realize_option  # noqa: E402
from edgellm.backends import SimulatedBackend, context_hash  # noqa: E402
from edgellm.bench import RunConfig, build_report, emit, replay  # noqa: E402
from edgellm.dataset import Conversation, dataset_stats, load_dataset  # noqa: E402
from edgellm.gateway import Gateway  # noqa: E402
from edgellm.monitor import MemorySink, ProcessProbe, run_sampler, summarize  # noqa: E402
from edgellm.registry import SimConfig, load_registry_file  # noqa: E402

# per-model accuracy targets used to calibrate the synthetic scorer
TARGET_ACCURACY = {
    "InternLM": 0.8074, "Gemma": 0.6938, "Llama3": 0.6867, "Mistral": 0.6843,
    "Llama2": 0.6843, "Phi": 0.6843, "Yi": 0.490, "Zephyr": 0.462,
}
REFERENCE_PROMPT_STATS = {"mean": 25.0, "std": 30.67, "min": 1, "max": 241}
ITEM_COUNT = 1000


def synthetic_items(count: int) -> list[MCItem]:
    return [
        MCItem(
            id=f"syn-{i:04d}",
            sentence=f"Synthetic reasoning case {i} resolves _ in the end.",
            options=("alpha", "beta"),
            answer_index=i % 2,
        )
        for i in range(count)
    ]


def calibrated_scorer(items: list[MCItem], target_accuracy: float) -> SimulatedBackend:
    """Table-driven scorer choosing the labeled answer for the first
    round(target * n) items and the other option for the rest."""
    favor_answer_until = round(target_accuracy * len(items))
    table: dict[str, dict[str, float]] = {}
    for index, item in enumerate(items):
        for option_index in (0, 1):
            context, continuation = realize_option(item, option_index)
            toward_answer = option_index == item.answer_index
            ll = -1.0 if toward_answer == (index < favor_answer_until) else -6.0
            table.setdefault(context_hash(context), {})[continuation] = ll
    return SimulatedBackend(SimConfig(
        prefill_ms_per_token=1.0, decode_ms_per_token=1.0, ll_table=table))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(ROOT / "configs" / "models.json"))
    parser.add_argument("--dataset",
                        default=str(ROOT / "datasets" / "oasst_replay_50.jsonl"))
    parser.add_argument("--out", default=str(ROOT / "out" / "pipeline"))
    parser.add_argument("--reps", type=int, default=3)
    parser.add_argument("--max-new-tokens", type=int, default=500)
    parser.add_argument("--quick", action="store_true",
                        help="10 conversations x 5 turns instead of the full corpus")
    args = parser.parse_args()

    registry = load_registry_file(args.config)
    conversations = load_dataset(args.dataset)
    if args.quick:
        conversations = [Conversation(id=c.id, turns=c.turns[:5])
                         for c in conversations[:10]]
    stats = dataset_stats(conversations)
    print(f"workload: {stats.conversation_count} conversations, "
          f"{stats.turn_count} turns, prompt words "
          f"mean={stats.prompt_word_mean:.2f} std={stats.prompt_word_std:.2f} "
          f"range=[{stats.prompt_word_min}, {stats.prompt_word_max}]")
    ref = REFERENCE_PROMPT_STATS
    print(f"reference corpus (for comparison only): mean={ref['mean']} "
          f"std={ref['std']} range=[{ref['min']}, {ref['max']}]")

    items = synthetic_items(ITEM_COUNT)
    all_records = []
    resources = {}
    accuracy = {}
    config = RunConfig(
        models=tuple(m.name for m in registry.models),
        dataset_path=str(args.dataset),
        repetitions=args.reps,
        max_new_tokens=args.max_new_tokens,
        monitor_resources=True,
    )
    for spec in registry.models:
        model_config = RunConfig(
            models=(spec.name,),
            repetitions=args.reps,
            max_new_tokens=args.max_new_tokens,
        )
        gateway = Gateway(registry, seed_offset=model_config.seed)
        sink = MemorySink()
        sampler = run_sampler(ProcessProbe(os.getpid()), 100, sink)
        started = time.monotonic()
        records = replay(model_config, gateway, conversations)
        elapsed = time.monotonic() - started
        sampler.stop()
        sampler.join()
        all_records.extend(records)
        if sum(1 for s in sink.samples if not s.baseline) >= 1:
            resources[spec.name] = summarize(sink.samples)

        target = TARGET_ACCURACY.get(spec.name)
        if target is not None:
            result = evaluate(items, calibrated_scorer(items, target))
            accuracy[spec.name] = result.accuracy
        print(f"{spec.name}: {len(records)} records in {elapsed:.2f}s"
              + (f", accuracy {accuracy[spec.name]:.4f}" if spec.name in accuracy
                 else ""))

    report = build_report(all_records, resource_summaries=resources,
                          accuracy_results=accuracy, stats=stats, config=config)
    paths = emit(report, all_records, args.out)
    for kind, path in sorted(paths.items()):
        print(f"{kind}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
