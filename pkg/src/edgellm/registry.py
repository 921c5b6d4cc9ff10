"""Model pool configuration: load, validate, and resolve backend endpoints.

The registry is immutable after load and safe to share across request
handlers; reloading replaces the whole object atomically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from .errors import (
    ClassMismatch,
    ConfigSyntax,
    DuplicateModel,
    IncompleteEndpoint,
    InvalidParamCount,
    ModelNotFound,
)

LARGE_THRESHOLD_B = 6.0
SMALL_THRESHOLD_B = 3.0


class SizeClass(str, Enum):
    LARGE = "Large"
    MEDIUM = "Medium"
    SMALL = "Small"


class BackendKind(str, Enum):
    HTTP_COMPLETION = "http"
    SIMULATED = "sim"


class ChatTemplate(str, Enum):
    GENERIC = "generic"
    PASSTHROUGH = "passthrough"


class ClockMode(str, Enum):
    WALL = "wall"
    INJECTED = "injected"


@dataclass(frozen=True)
class SimConfig:
    """Deterministic backend parameters: per-token pacing plus seeded jitter.

    ``clock="injected"`` reports timings without sleeping; ``"wall"``
    physically paces tokens. ``ll_table`` optionally maps
    (sha256(context) hex, continuation) to an explicit log-likelihood;
    continuations not in the table score -1 per whitespace token.
    """

    prefill_ms_per_token: float
    decode_ms_per_token: float
    jitter_sigma_ms: float = 0.0
    clock: ClockMode = ClockMode.INJECTED
    seed: int = 0
    stop_after_tokens: int | None = None
    ll_table: Mapping[str, Mapping[str, float]] | None = None

    def __post_init__(self):
        if self.prefill_ms_per_token <= 0 or self.decode_ms_per_token <= 0:
            raise ValueError("per-token times must be positive")
        if self.jitter_sigma_ms < 0:
            raise ValueError("jitter_sigma_ms must be >= 0")
        if self.stop_after_tokens is not None and self.stop_after_tokens < 1:
            raise ValueError("stop_after_tokens must be >= 1 when set")


@dataclass(frozen=True)
class BackendEndpoint:
    """Exactly one of ``url`` / ``sim`` is populated, matching ``kind``."""

    kind: BackendKind
    url: str | None = None
    sim: SimConfig | None = None

    def __post_init__(self):
        if self.kind is BackendKind.HTTP_COMPLETION:
            if not self.url or self.sim is not None:
                raise IncompleteEndpoint("http endpoint requires url and no sim config")
        else:
            if self.sim is None or self.url is not None:
                raise IncompleteEndpoint("sim endpoint requires sim config and no url")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params_billions: float
    size_class: SizeClass
    quantization: str
    backend: BackendEndpoint
    chat_template: ChatTemplate = ChatTemplate.GENERIC
    max_context_tokens: int = 4096


@dataclass(frozen=True)
class Registry:
    models: tuple[ModelSpec, ...]

    def get(self, model_name: str) -> ModelSpec:
        for spec in self.models:
            if spec.name == model_name:
                return spec
        raise ModelNotFound(f"model '{model_name}' is not registered")

    def __contains__(self, model_name: str) -> bool:
        return any(spec.name == model_name for spec in self.models)


def classify_size(params_billions: float) -> SizeClass:
    """Size class from parameter count: Large > 6B, Medium in [3B, 6B], Small < 3B."""
    if not math.isfinite(params_billions) or params_billions <= 0:
        raise InvalidParamCount(f"parameter count must be positive, got {params_billions}")
    if params_billions > LARGE_THRESHOLD_B:
        return SizeClass.LARGE
    if params_billions >= SMALL_THRESHOLD_B:
        return SizeClass.MEDIUM
    return SizeClass.SMALL


def resolve_backend(registry: Registry, model_name: str) -> BackendEndpoint:
    """Endpoint of the uniquely named model; lookup is case-sensitive."""
    return registry.get(model_name).backend


def _parse_sim(doc: Any) -> SimConfig:
    if not isinstance(doc, dict):
        raise ConfigSyntax("sim config must be an object")
    try:
        return SimConfig(
            prefill_ms_per_token=float(doc["prefill_ms_per_token"]),
            decode_ms_per_token=float(doc["decode_ms_per_token"]),
            jitter_sigma_ms=float(doc.get("jitter_sigma_ms", 0.0)),
            clock=ClockMode(doc.get("clock", "injected")),
            seed=int(doc.get("seed", 0)),
            stop_after_tokens=(
                int(doc["stop_after_tokens"]) if "stop_after_tokens" in doc else None
            ),
            ll_table=doc.get("ll_table"),
        )
    except IncompleteEndpoint:
        raise
    except KeyError as exc:
        raise IncompleteEndpoint(f"sim config missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigSyntax(f"invalid sim config: {exc}") from exc


def _parse_backend(doc: Any) -> BackendEndpoint:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise IncompleteEndpoint("backend requires a kind of 'http' or 'sim'")
    try:
        kind = BackendKind(doc["kind"])
    except ValueError as exc:
        raise ConfigSyntax(f"unknown backend kind {doc['kind']!r}") from exc
    if kind is BackendKind.HTTP_COMPLETION:
        if "url" not in doc:
            raise IncompleteEndpoint("http backend requires url")
        return BackendEndpoint(kind=kind, url=str(doc["url"]))
    if "sim" not in doc:
        raise IncompleteEndpoint("sim backend requires sim config")
    return BackendEndpoint(kind=kind, sim=_parse_sim(doc["sim"]))


def _parse_model(doc: Any) -> ModelSpec:
    if not isinstance(doc, dict):
        raise ConfigSyntax("each model entry must be an object")
    missing = [k for k in ("name", "params_billions", "quantization",
                           "backend", "max_context_tokens") if k not in doc]
    if missing:
        raise ConfigSyntax(f"model entry missing fields: {', '.join(missing)}")
    name = doc["name"]
    if not isinstance(name, str) or not name.strip():
        raise ConfigSyntax("model name must be a non-empty string")
    try:
        params = float(doc["params_billions"])
    except (TypeError, ValueError) as exc:
        raise ConfigSyntax(f"params_billions must be a number: {exc}") from exc
    derived = classify_size(params)
    if "size_class" in doc:
        try:
            declared = SizeClass(doc["size_class"])
        except ValueError as exc:
            raise ConfigSyntax(f"unknown size_class {doc['size_class']!r}") from exc
        if declared is not derived:
            raise ClassMismatch(
                f"model '{name}': declared {declared.value} but "
                f"{params}B classifies as {derived.value}"
            )
    max_context = doc["max_context_tokens"]
    if not isinstance(max_context, int) or max_context < 1:
        raise ConfigSyntax("max_context_tokens must be a positive integer")
    try:
        template = ChatTemplate(doc.get("chat_template", "generic"))
    except ValueError as exc:
        raise ConfigSyntax(f"unknown chat_template {doc['chat_template']!r}") from exc
    return ModelSpec(
        name=name,
        params_billions=params,
        size_class=derived,
        quantization=str(doc["quantization"]),
        backend=_parse_backend(doc["backend"]),
        chat_template=template,
        max_context_tokens=max_context,
    )


def load_registry(config_document: str | Mapping[str, Any]) -> Registry:
    """Parse and validate a registry config (JSON text or an already-parsed dict)."""
    if isinstance(config_document, str):
        try:
            doc = json.loads(config_document)
        except json.JSONDecodeError as exc:
            raise ConfigSyntax(f"config is not valid JSON: {exc}") from exc
    else:
        doc = config_document
    if not isinstance(doc, dict) or not isinstance(doc.get("models"), list):
        raise ConfigSyntax("config must be an object with a 'models' list")
    if not doc["models"]:
        raise ConfigSyntax("registry must contain at least one model")
    models = []
    seen: set[str] = set()
    for entry in doc["models"]:
        spec = _parse_model(entry)
        if spec.name in seen:
            raise DuplicateModel(f"duplicate model name '{spec.name}'")
        seen.add(spec.name)
        models.append(spec)
    return Registry(models=tuple(models))


def load_registry_file(path: str | Path) -> Registry:
    return load_registry(Path(path).read_text(encoding="utf-8"))


def registry_to_config(registry: Registry) -> dict[str, Any]:
    """Serialize back to the config schema; load_registry(result) round-trips."""
    models = []
    for spec in registry.models:
        backend: dict[str, Any] = {"kind": spec.backend.kind.value}
        if spec.backend.url is not None:
            backend["url"] = spec.backend.url
        if spec.backend.sim is not None:
            sim = spec.backend.sim
            backend["sim"] = {
                "prefill_ms_per_token": sim.prefill_ms_per_token,
                "decode_ms_per_token": sim.decode_ms_per_token,
                "jitter_sigma_ms": sim.jitter_sigma_ms,
                "clock": sim.clock.value,
                "seed": sim.seed,
            }
            if sim.stop_after_tokens is not None:
                backend["sim"]["stop_after_tokens"] = sim.stop_after_tokens
            if sim.ll_table is not None:
                backend["sim"]["ll_table"] = {
                    ctx: dict(conts) for ctx, conts in sim.ll_table.items()
                }
        models.append({
            "name": spec.name,
            "params_billions": spec.params_billions,
            "size_class": spec.size_class.value,
            "quantization": spec.quantization,
            "backend": backend,
            "chat_template": spec.chat_template.value,
            "max_context_tokens": spec.max_context_tokens,
        })
    return {"models": models}
