"""Run manifest parsing and validation.

A manifest is a single YAML file; every scoring hyperparameter has the
standard default (uniform 1/3 weights, top-k 4, capacity 1000). Provider
endpoints and tokens may be overridden by environment variables only.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .recall import RecallConfig, ScoringWeights, Variant

MODE_SELF_IMPROVEMENT = "self-improvement"
MODE_EVALUATE = "evaluate"

ENV_CHAT_ENDPOINT = "EXPMEM_CHAT_ENDPOINT"
ENV_EMBED_ENDPOINT = "EXPMEM_EMBED_ENDPOINT"


@dataclass
class ProviderSettings:
    mode: str = "offline"
    embed_dim: int = 256
    embed_cache_entries: int = 10_000
    embed_endpoint: str | None = None
    embed_model: str | None = None
    embed_token_env: str = "EXPMEM_EMBED_TOKEN"
    chat_endpoint: str | None = None
    chat_model: str | None = None
    chat_token_env: str = "EXPMEM_CHAT_TOKEN"


@dataclass
class SyntheticSettings:
    templates: int = 5
    variants: int = 8
    count: int = 600
    decoys_per_variant: int = 4
    seed: int = 7


@dataclass
class RunConfig:
    """Everything one run needs, bound from a manifest file."""

    mode: str = MODE_SELF_IMPROVEMENT
    batches: int = 10
    rng_seed: int = 42
    update_granularity: str = "batch"
    sequential: bool = True
    workers: int = 1
    lambda1: float = 1.0 / 3.0
    lambda2: float = 1.0 / 3.0
    lambda3: float = 1.0 / 3.0
    top_k: int = 4
    variant: str = Variant.FULL.value
    empty_toolchain_coverage: float = 1.0
    unknown_intents_match: bool = True
    pool_capacity: int = 1000
    pool_eviction: str = "fifo"
    pool_path: str | None = None
    seed_demos_path: str | None = None
    task_kind: str = "synthetic"
    task_path: str | None = None
    intents: list[tuple[str, str]] = field(default_factory=list)
    horizon: int = 6
    synthetic: SyntheticSettings = field(default_factory=SyntheticSettings)
    providers: ProviderSettings = field(default_factory=ProviderSettings)
    output_dir: str = "out"

    def recall_config(self) -> RecallConfig | None:
        """The recall configuration, or None when top_k = 0 (zero-shot)."""
        if self.top_k == 0:
            return None
        return RecallConfig(
            weights=ScoringWeights(self.lambda1, self.lambda2, self.lambda3),
            top_k=self.top_k,
            variant=Variant(self.variant),
            empty_toolchain_coverage=self.empty_toolchain_coverage,
            unknown_intents_match=self.unknown_intents_match,
        )


def _expect_mapping(value, name: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError("must be a mapping", field=name)
    return value


def _get_number(section: dict, key: str, default, name: str, *, minimum=None):
    value = section.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("must be a number", field=name)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}", field=name)
    return value


def _get_int(section: dict, key: str, default, name: str, *, minimum=None) -> int:
    value = section.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError("must be an integer", field=name)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}", field=name)
    return value


def _get_choice(section: dict, key: str, default: str, name: str, choices: tuple[str, ...]) -> str:
    value = section.get(key, default)
    if value not in choices:
        raise ConfigError(f"must be one of {', '.join(choices)}", field=name)
    return value


def load_manifest(path: str | Path) -> RunConfig:
    """Parse and validate a manifest; raises ConfigError naming bad fields."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read manifest: {exc}", field=str(path)) from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", field=str(path)) from exc
    raw = _expect_mapping(raw, "manifest")

    run = _expect_mapping(raw.get("run"), "run")
    recall = _expect_mapping(raw.get("recall"), "recall")
    pool = _expect_mapping(raw.get("pool"), "pool")
    tasks = _expect_mapping(raw.get("tasks"), "tasks")
    providers = _expect_mapping(raw.get("providers"), "providers")
    outputs = _expect_mapping(raw.get("outputs"), "outputs")

    cfg = RunConfig()
    cfg.mode = _get_choice(
        run, "mode", MODE_SELF_IMPROVEMENT, "run.mode", (MODE_SELF_IMPROVEMENT, MODE_EVALUATE)
    )
    cfg.batches = _get_int(run, "batches", 10, "run.batches", minimum=1)
    cfg.rng_seed = _get_int(run, "rng_seed", 42, "run.rng_seed")
    cfg.update_granularity = _get_choice(
        run,
        "update_granularity",
        "batch" if cfg.mode == MODE_SELF_IMPROVEMENT else "episode",
        "run.update_granularity",
        ("episode", "batch", "none"),
    )
    sequential = run.get("sequential", True)
    if not isinstance(sequential, bool):
        raise ConfigError("must be a boolean", field="run.sequential")
    cfg.sequential = sequential
    cfg.workers = _get_int(run, "workers", 1, "run.workers", minimum=1)

    cfg.lambda1 = float(_get_number(recall, "lambda1", cfg.lambda1, "lambda1", minimum=0))
    cfg.lambda2 = float(_get_number(recall, "lambda2", cfg.lambda2, "lambda2", minimum=0))
    cfg.lambda3 = float(_get_number(recall, "lambda3", cfg.lambda3, "lambda3", minimum=0))
    cfg.top_k = _get_int(recall, "top_k", 4, "top_k", minimum=0)
    cfg.variant = _get_choice(
        recall, "variant", Variant.FULL.value, "variant", tuple(v.value for v in Variant)
    )
    cfg.empty_toolchain_coverage = float(
        _get_number(recall, "empty_toolchain_coverage", 1.0, "empty_toolchain_coverage")
    )
    unknown = recall.get("unknown_intents_match", True)
    if not isinstance(unknown, bool):
        raise ConfigError("must be a boolean", field="unknown_intents_match")
    cfg.unknown_intents_match = unknown
    if cfg.top_k > 0:
        try:
            cfg.recall_config()
        except ConfigError:
            raise
    elif cfg.lambda1 + cfg.lambda2 + cfg.lambda3 <= 0:
        raise ConfigError("at least one weight must be positive", field="lambda1")

    cfg.pool_capacity = _get_int(pool, "capacity", 1000, "pool.capacity", minimum=1)
    cfg.pool_eviction = _get_choice(
        pool, "eviction", "fifo", "pool.eviction", ("fifo", "reject-new")
    )
    cfg.pool_path = pool.get("path")
    cfg.seed_demos_path = pool.get("seed_demos")

    cfg.task_kind = _get_choice(tasks, "kind", "synthetic", "tasks.kind", ("synthetic", "file"))
    cfg.task_path = tasks.get("path")
    if cfg.task_kind == "file" and not cfg.task_path:
        raise ConfigError("required when tasks.kind is 'file'", field="tasks.path")
    cfg.horizon = _get_int(tasks, "horizon", 6, "tasks.horizon", minimum=1)
    intents = tasks.get("intents", [])
    if not isinstance(intents, list):
        raise ConfigError("must be a list of {name, description}", field="tasks.intents")
    cfg.intents = []
    for i, entry in enumerate(intents):
        if not isinstance(entry, dict) or "name" not in entry:
            raise ConfigError("each entry needs a name", field=f"tasks.intents[{i}]")
        cfg.intents.append((str(entry["name"]), str(entry.get("description", ""))))
    synthetic = _expect_mapping(tasks.get("synthetic"), "tasks.synthetic")
    cfg.synthetic = SyntheticSettings(
        templates=_get_int(synthetic, "templates", 5, "tasks.synthetic.templates", minimum=1),
        variants=_get_int(synthetic, "variants", 8, "tasks.synthetic.variants", minimum=1),
        count=_get_int(synthetic, "count", 600, "tasks.synthetic.count", minimum=1),
        decoys_per_variant=_get_int(
            synthetic, "decoys_per_variant", 4, "tasks.synthetic.decoys_per_variant", minimum=0
        ),
        seed=_get_int(synthetic, "seed", 7, "tasks.synthetic.seed"),
    )

    mode = _get_choice(providers, "mode", "offline", "providers.mode", ("offline", "remote"))
    embedding = _expect_mapping(providers.get("embedding"), "providers.embedding")
    chat = _expect_mapping(providers.get("chat"), "providers.chat")
    settings = ProviderSettings(mode=mode)
    settings.embed_dim = _get_int(embedding, "dim", 256, "providers.embedding.dim", minimum=1)
    settings.embed_cache_entries = _get_int(
        embedding, "cache_entries", 10_000, "providers.embedding.cache_entries", minimum=1
    )
    settings.embed_endpoint = embedding.get("endpoint")
    settings.embed_model = embedding.get("model")
    settings.embed_token_env = embedding.get("token_env", "EXPMEM_EMBED_TOKEN")
    settings.chat_endpoint = chat.get("endpoint")
    settings.chat_model = chat.get("model")
    settings.chat_token_env = chat.get("token_env", "EXPMEM_CHAT_TOKEN")
    # Endpoint overrides come from the environment only.
    settings.chat_endpoint = os.environ.get(ENV_CHAT_ENDPOINT, settings.chat_endpoint)
    settings.embed_endpoint = os.environ.get(ENV_EMBED_ENDPOINT, settings.embed_endpoint)
    if mode == "remote":
        if not settings.embed_endpoint:
            raise ConfigError("required in remote mode", field="providers.embedding.endpoint")
        if not settings.chat_endpoint:
            raise ConfigError("required in remote mode", field="providers.chat.endpoint")
    cfg.providers = settings

    cfg.output_dir = outputs.get("dir", "out")
    if not isinstance(cfg.output_dir, str):
        raise ConfigError("must be a string", field="outputs.dir")
    return cfg
