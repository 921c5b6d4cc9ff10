"""Edge LLM serving gateway and benchmark harness.

Routes chat traffic to pluggable model backends (llama.cpp-style HTTP
servers or a deterministic simulator), replays multi-turn conversation
workloads, and computes prefill/decode throughput, per-token latency,
resource usage, context-sensitivity CV, and log-likelihood accuracy.
"""

__version__ = "0.1.0"
