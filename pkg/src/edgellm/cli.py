"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 run-failure threshold,
4 IO failure. EDGELLM_LOG controls the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .accuracy import evaluate, load_items, result_to_json
from .bench import RunConfig, build_report, emit, load_records, replay
from .dataset import dataset_stats, load_dataset
from .errors import CapabilityMissing, ConfigError, EdgeLLMError, IoError, ModelRunFailed
from .gateway import Gateway, create_app
from .monitor import MemorySink, MetricsHub, ProcessProbe, run_sampler, summarize
from .registry import BackendKind, load_registry_file

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN_FAILED = 3
EXIT_IO = 4

DEFAULT_CONFIG = "configs/models.json"


def _setup_logging() -> None:
    level = os.environ.get("EDGELLM_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgellm")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the chat gateway")
    serve.add_argument("--config", required=True)
    serve.add_argument("--listen", default="127.0.0.1:8080")
    serve.add_argument("--ui-dir", default=None,
                       help="serve a built web UI from this directory at /ui")

    bench = sub.add_parser("bench", help="benchmark workloads")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)

    run = bench_sub.add_parser("run", help="replay a dataset through the gateway")
    run.add_argument("--config", required=True)
    run.add_argument("--dataset", required=True)
    run.add_argument("--models", default=None,
                     help="comma-separated subset (default: every configured model)")
    run.add_argument("--reps", type=int, default=3)
    run.add_argument("--max-new-tokens", type=int, default=500)
    run.add_argument("--warmup", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True)
    run.add_argument("--sim-only", action="store_true",
                     help="drop models without simulated backends")
    run.add_argument("--monitor-resources", action="store_true")

    rep = bench_sub.add_parser("report", help="rebuild a report from records.csv")
    rep.add_argument("--records", required=True)
    rep.add_argument("--out", required=True)

    ds = sub.add_parser("dataset", help="dataset utilities")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    ds_stats = ds_sub.add_parser("stats", help="print prompt-length statistics")
    ds_stats.add_argument("path")

    ev = sub.add_parser("eval", help="model evaluation")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True)
    acc = ev_sub.add_parser("accuracy", help="two-option log-likelihood accuracy")
    acc.add_argument("--items", required=True)
    acc.add_argument("--model", required=True)
    acc.add_argument("--config", default=DEFAULT_CONFIG)
    acc.add_argument("--out", default=None)

    return parser


def _cmd_serve(args) -> int:
    import uvicorn

    registry = load_registry_file(args.config)
    hub = MetricsHub()
    gateway = Gateway(registry, metrics_hub=hub)
    app = create_app(gateway)
    if args.ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=args.ui_dir, html=True), name="ui")

    # monitor this process on behalf of every locally simulated model
    probe = ProcessProbe(os.getpid())
    local_models = [
        spec for spec in registry.models
        if spec.backend.kind is BackendKind.SIMULATED
    ]

    class _HubSink:
        def emit(self, sample):
            if sample.baseline:
                return
            for spec in local_models:
                labels = {"model": spec.name, "backend_kind": spec.backend.kind.value}
                hub.set_gauge("edgellm_cpu_total_fraction", labels,
                              sample.cpu_total_fraction)
                hub.set_gauge("edgellm_cpu_core_fraction", labels,
                              sample.cpu_core_fraction)
                hub.set_gauge("edgellm_rss_bytes", labels, float(sample.rss_bytes))

        def close(self, reason):
            pass

    sampler = run_sampler(probe, interval_ms=500, sink=_HubSink())
    host, _, port = args.listen.partition(":")
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port or "8080"),
                    log_level="warning")
    finally:
        sampler.stop()
    return EXIT_OK


def _cmd_bench_run(args) -> int:
    registry = load_registry_file(args.config)
    names = ([m.strip() for m in args.models.split(",") if m.strip()]
             if args.models else [spec.name for spec in registry.models])
    if args.sim_only:
        kept = []
        for name in names:
            if registry.get(name).backend.kind is BackendKind.SIMULATED:
                kept.append(name)
            else:
                logger.warning("skipping %s: not a simulated backend", name)
        names = kept
        if not names:
            raise ConfigError("--sim-only left no models to run")
    config = RunConfig(
        models=tuple(names),
        dataset_path=args.dataset,
        repetitions=args.reps,
        max_new_tokens=args.max_new_tokens,
        warmup_requests=args.warmup,
        seed=args.seed,
        monitor_resources=args.monitor_resources,
    )
    gateway = Gateway(registry, seed_offset=config.seed)
    conversations = load_dataset(args.dataset)
    stats = dataset_stats(conversations)

    sampler = None
    sink = None
    if config.monitor_resources:
        sink = MemorySink()
        sampler = run_sampler(ProcessProbe(os.getpid()), interval_ms=500, sink=sink)

    exit_code = EXIT_OK
    try:
        records = replay(config, gateway, conversations)
    except ModelRunFailed as exc:
        logger.error("%s", exc)
        records = exc.records
        exit_code = EXIT_RUN_FAILED
    finally:
        if sampler is not None:
            sampler.stop()
            sampler.join()

    resources = None
    if sink is not None and sink.samples:
        summary = summarize(sink.samples)
        resources = {name: summary for name in config.models}
    report = build_report(records, resource_summaries=resources,
                          stats=stats, config=config)
    paths = emit(report, records, args.out)
    for kind, path in sorted(paths.items()):
        print(f"{kind}: {path}")
    return exit_code


def _cmd_bench_report(args) -> int:
    records = load_records(args.records)
    report = build_report(records, config={"records": str(args.records)})
    paths = emit(report, records, args.out)
    for kind, path in sorted(paths.items()):
        print(f"{kind}: {path}")
    return EXIT_OK


def _cmd_dataset_stats(args) -> int:
    stats = dataset_stats(load_dataset(args.path))
    print(json.dumps({
        "conversation_count": stats.conversation_count,
        "turn_count": stats.turn_count,
        "prompt_word_mean": stats.prompt_word_mean,
        "prompt_word_std": stats.prompt_word_std,
        "prompt_word_min": stats.prompt_word_min,
        "prompt_word_max": stats.prompt_word_max,
    }, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_eval_accuracy(args) -> int:
    registry = load_registry_file(args.config)
    gateway = Gateway(registry)
    items = load_items(args.items)
    backend = gateway.adapter_for(registry.get(args.model).name)
    try:
        result = evaluate(items, backend)
    except CapabilityMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    payload = json.dumps(result_to_json(result), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        print(f"result: {args.out}")
    else:
        print(payload)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "serve":
            return _cmd_serve(args)
        if args.command == "bench" and args.bench_command == "run":
            return _cmd_bench_run(args)
        if args.command == "bench" and args.bench_command == "report":
            return _cmd_bench_report(args)
        if args.command == "dataset":
            return _cmd_dataset_stats(args)
        if args.command == "eval":
            return _cmd_eval_accuracy(args)
        raise AssertionError("unreachable")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelRunFailed as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    except IoError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EdgeLLMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
