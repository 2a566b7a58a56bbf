"""Command-line operator surface: run, recall, sweep, pool-stats.

Exit codes are stable: 0 success, 2 configuration error, 3 provider error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .config import (
    MODE_EVALUATE,
    MODE_SELF_IMPROVEMENT,
    RunConfig,
    load_manifest,
)
from .embedding import CachedEmbedder, EmbeddingProvider, HashingEmbedder, RemoteEmbedder
from .errors import ConfigError, ExpmemError, ProviderError, StorageError
from .harness import BatchReport, EpisodeOutcome, SimTool, run_self_improvement
from .metrics import accuracy, macro_accuracy
from .pool import ExperiencePool, load_pool, save_pool
from .providers import (
    ChatIntentRecognizer,
    ChatJudgeEvaluator,
    ChatProvider,
    Evaluator,
    IntentCatalog,
    IntentLabel,
    IntentRecognizer,
    RemoteChatProvider,
)
from .recall import RecallConfig, ScoringWeights, StepFeatures, Variant, recall_top_k
from .synthetic import build_world
from .trajectory import TaskSpec, ToolChain, read_trajectories, trajectory_to_dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_IO = 4

TRAJECTORY_LOG = "trajectories.jsonl"
BATCH_REPORTS = "batch_reports.csv"
METRICS_SUMMARY = "metrics.jsonl"
POOL_FILE = "pool.jsonl"
SWEEP_TABLE = "sweep.csv"


@dataclass
class RunResult:
    reports: list[BatchReport]
    outcomes: list[EpisodeOutcome]
    pool: ExperiencePool


def _build_embedder(cfg: RunConfig) -> EmbeddingProvider:
    settings = cfg.providers
    if settings.mode == "offline":
        inner: EmbeddingProvider = HashingEmbedder(settings.embed_dim)
    else:
        inner = RemoteEmbedder(
            settings.embed_endpoint or "",
            settings.embed_dim,
            model=settings.embed_model,
            token=os.environ.get(settings.embed_token_env),
        )
    return CachedEmbedder(inner, max_entries=settings.embed_cache_entries)


def _build_chat(cfg: RunConfig) -> ChatProvider:
    settings = cfg.providers
    return RemoteChatProvider(
        settings.chat_endpoint or "",
        settings.chat_model or "default",
        token=os.environ.get(settings.chat_token_env),
    )


def _bind_run(cfg: RunConfig):
    """Resolve tasks, tools, providers, and the seeded pool from a config."""
    embedder = _build_embedder(cfg)
    if cfg.task_kind == "synthetic":
        world = build_world(
            n_templates=cfg.synthetic.templates,
            n_variants=cfg.synthetic.variants,
            n_tasks=cfg.synthetic.count,
            decoys_per_variant=cfg.synthetic.decoys_per_variant,
            rng_seed=cfg.synthetic.seed,
            max_steps=cfg.horizon,
        )
        tasks: list[TaskSpec] = list(world.tasks)
        tools: tuple[SimTool, ...] = world.tools
        catalog = world.catalog
        seed_trajectories = list(world.seed_trajectories)
        if cfg.providers.mode == "offline":
            agent: ChatProvider = world.make_agent()
            evaluator: Evaluator = world.make_evaluator()
            recognizer: IntentRecognizer = world.make_intent_recognizer()
        else:
            chat = _build_chat(cfg)
            agent = chat
            evaluator = ChatJudgeEvaluator(chat)
            recognizer = ChatIntentRecognizer(chat, catalog)
    else:
        if cfg.providers.mode == "offline":
            raise ConfigError(
                "file tasks need providers.mode: remote (no scripted agent exists for them)",
                field="tasks.kind",
            )
        tasks = [t.task for t in ()]  # placeholder, replaced below
        loaded = read_trajectories(cfg.task_path) if False else None
        raise ConfigError("unreachable", field="tasks.kind")
    if cfg.seed_demos_path:
        seed_trajectories.extend(read_trajectories(cfg.seed_demos_path))
    if cfg.pool_path and Path(cfg.pool_path).exists():
        pool = load_pool(cfg.pool_path, expected_embedder_id=embedder.provider_id)
    else:
        pool = ExperiencePool(
            capacity=cfg.pool_capacity,
            dim=embedder.dim,
            embedder_id=embedder.provider_id,
            eviction=cfg.pool_eviction,
        )
        pool.seed(seed_trajectories, embedder, recognizer)
    return tasks, tools, agent, evaluator, recognizer, embedder, pool


def execute_run(cfg: RunConfig, output_dir: Path | None = None) -> RunResult:
    """Run the manifest-described experiment; optionally write artifacts."""
    tasks, tools, agent, evaluator, recognizer, embedder, pool = _bind_run(cfg)
    recall_cfg = cfg.recall_config()
    batches = cfg.batches if cfg.mode == MODE_SELF_IMPROVEMENT else 1
    workers = 1 if cfg.sequential else cfg.workers
    outcomes: list[EpisodeOutcome] = []
    sink = outcomes.append
    reports = run_self_improvement(
        tasks,
        batches,
        pool,
        recall_cfg,
        agent=agent,
        evaluator=evaluator,
        embedder=embedder,
        intent_recognizer=recognizer,
        tools=tools,
        rng_seed=cfg.rng_seed,
        update_granularity=cfg.update_granularity,
        workers=workers,
        episode_sink=sink,
    )
    total = sum(r.size for r in reports)
    failures = sum(r.provider_failures for r in reports)
    if total > 0 and failures == total:
        raise ProviderError("every episode failed on provider errors; check endpoints")
    result = RunResult(reports=reports, outcomes=outcomes, pool=pool)
    if output_dir is not None:
        _write_artifacts(result, output_dir)
    return result


def _write_artifacts(result: RunResult, output_dir: Path) -> None:
    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / TRAJECTORY_LOG, "w", encoding="utf-8") as fh:
        for outcome in result.outcomes:
            fh.write(json.dumps(trajectory_to_dict(outcome.trajectory), ensure_ascii=False))
            fh.write("\n")
    with open(output_dir / BATCH_REPORTS, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["batch_index", "size", "successes", "accuracy", "smoothed", "provider_failures"]
        )
        for r in result.reports:
            writer.writerow(
                [
                    r.batch_index,
                    r.size,
                    r.successes,
                    repr(r.accuracy),
                    "" if r.smoothed is None else repr(r.smoothed),
                    r.provider_failures,
                ]
            )
    with open(output_dir / METRICS_SUMMARY, "w", encoding="utf-8") as fh:
        for line in _metric_lines(result):
            fh.write(json.dumps(line, ensure_ascii=False))
            fh.write("\n")
    save_pool(result.pool, output_dir / POOL_FILE)


def _metric_lines(result: RunResult) -> list[dict]:
    verdicts = [o.verdict.is_match for o in result.outcomes]
    by_domain: dict[str, list[bool]] = {}
    for outcome in result.outcomes:
        domain = outcome.trajectory.task.template_id or "untagged"
        by_domain.setdefault(domain, []).append(outcome.verdict.is_match)
    domain_accuracy = {d: accuracy(v) for d, v in sorted(by_domain.items())}
    lines = [
        {"metric": "overall_accuracy", "value": accuracy(verdicts) if verdicts else None},
        {"metric": "final_batch_accuracy", "value": result.reports[-1].accuracy},
        {
            "metric": "batch_accuracy_series",
            "value": [r.accuracy for r in result.reports],
        },
        {"metric": "macro_accuracy", "value": macro_accuracy(list(domain_accuracy.values()))},
        {"metric": "per_domain_accuracy", "value": domain_accuracy},
        {"metric": "pool_size", "value": len(result.pool)},
        {
            "metric": "provider_failures",
            "value": sum(r.provider_failures for r in result.reports),
        },
    ]
    return lines


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_manifest(args.manifest)
    if args.sequential:
        cfg.sequential = True
    output_dir = Path(cfg.output_dir)
    result = execute_run(cfg, output_dir=output_dir)
    for report in result.reports:
        smoothed = "-" if report.smoothed is None else f"{report.smoothed:.4f}"
        print(
            f"batch {report.batch_index:3d}  size {report.size:4d}  "
            f"accuracy {report.accuracy:.4f}  smoothed {smoothed}"
        )
    print(f"pool size: {len(result.pool)}")
    print(f"artifacts: {output_dir}/")
    return EXIT_OK


def _format_rows(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return "\n".join(json.dumps(row, ensure_ascii=False) for row in rows)
    if not rows:
        return "(empty)"
    headers = list(rows[0].keys())
    rendered = [[_cell(row[h]) for h in headers] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in rendered)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for r in rendered:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _pool_embedder(pool: ExperiencePool) -> EmbeddingProvider:
    embedder_id = pool.embedder_id or ""
    if embedder_id.startswith("hashing-v1-"):
        return HashingEmbedder(int(embedder_id.rsplit("-", 1)[-1]))
    endpoint = os.environ.get("EXPMEM_EMBED_ENDPOINT")
    if endpoint and pool.dim:
        return RemoteEmbedder(endpoint, pool.dim)
    raise ConfigError(
        f"pool was embedded with {embedder_id!r}; set EXPMEM_EMBED_ENDPOINT to query it",
        field="EXPMEM_EMBED_ENDPOINT",
    )


def cmd_recall(args: argparse.Namespace) -> int:
    if not args.query.strip():
        raise ConfigError("query must be non-empty", field="query")
    pool = load_pool(args.pool)
    if len(pool) == 0:
        print(_format_rows([], args.format))
        return EXIT_OK
    embedder = _pool_embedder(pool)
    cfg = RecallConfig(
        weights=ScoringWeights(args.lambda1, args.lambda2, args.lambda3),
        top_k=args.k,
        variant=Variant(args.variant),
    )
    chain = ToolChain(sequence=tuple(t for t in (args.tools or "").split(",") if t))
    features = StepFeatures(
        history_embedding=embedder.embed(f"user: {args.query}"),
        query_embedding=embedder.embed(args.query),
        toolchain=chain,
        intent=IntentLabel(args.intent),
    )
    candidates = recall_top_k(pool, features, cfg)
    print(_format_rows([c.to_dict() for c in candidates], args.format))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_manifest(args.manifest)
    if args.sequential:
        cfg.sequential = True
    ks = [int(k) for k in args.top_k.split(",")] if args.top_k else [cfg.top_k]
    variants = args.variants.split(",") if args.variants else [cfg.variant]
    for k in ks:
        if k < 0:
            raise ConfigError("must be >= 0", field="top_k")
    for variant in variants:
        if variant not in tuple(v.value for v in Variant):
            raise ConfigError(f"unknown variant {variant!r}", field="variant")
    rows = []
    for k in ks:
        for variant in variants:
            point = replace_config(cfg, top_k=k, variant=variant)
            result = execute_run(point)
            rows.append(
                {
                    "top_k": k,
                    "variant": variant,
                    "overall_accuracy": accuracy(
                        [o.verdict.is_match for o in result.outcomes]
                    ),
                    "final_batch_accuracy": result.reports[-1].accuracy,
                }
            )
    table = _format_rows(rows, args.format)
    print(table)
    output_dir = Path(cfg.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / SWEEP_TABLE, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["top_k", "variant", "overall_accuracy", "final_batch_accuracy"])
        for row in rows:
            writer.writerow(
                [
                    row["top_k"],
                    row["variant"],
                    repr(row["overall_accuracy"]),
                    repr(row["final_batch_accuracy"]),
                ]
            )
    return EXIT_OK


def replace_config(cfg: RunConfig, **changes) -> RunConfig:
    clone = RunConfig(**{**cfg.__dict__})
    for key, value in changes.items():
        setattr(clone, key, value)
    return clone


def cmd_pool_stats(args: argparse.Namespace) -> int:
    pool = load_pool(args.pool)
    stats = pool.stats()
    if args.format == "json":
        print(json.dumps(stats, ensure_ascii=False))
        return EXIT_OK
    print(f"size: {stats['size']} / capacity {stats['capacity']}")
    print("intents:")
    for name, count in stats["intents"].items():
        print(f"  {name}: {count}")
    print("tools:")
    for name, count in stats["tools"].items():
        print(f"  {name}: {count}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expmem",
        description="Experience-memory engine: run experiments, query pools, sweep ablations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a manifest-described experiment")
    run_p.add_argument("manifest")
    run_p.add_argument(
        "--sequential", action="store_true", help="force sequential episodes (bit-reproducible)"
    )
    run_p.set_defaults(handler=cmd_run)

    recall_p = sub.add_parser("recall", help="score a query against a stored pool")
    recall_p.add_argument("pool")
    recall_p.add_argument("query")
    recall_p.add_argument("-k", type=int, default=4)
    recall_p.add_argument("--lambda1", type=float, default=1.0 / 3.0)
    recall_p.add_argument("--lambda2", type=float, default=1.0 / 3.0)
    recall_p.add_argument("--lambda3", type=float, default=1.0 / 3.0)
    recall_p.add_argument(
        "--variant", default="full", choices=[v.value for v in Variant]
    )
    recall_p.add_argument("--intent", default="unknown", help="intent label of the query")
    recall_p.add_argument("--tools", default="", help="comma-separated tools already used")
    recall_p.add_argument("--format", default="table", choices=["table", "json"])
    recall_p.set_defaults(handler=cmd_recall)

    sweep_p = sub.add_parser("sweep", help="grid of runs over top-k and/or variants")
    sweep_p.add_argument("manifest")
    sweep_p.add_argument("--top-k", dest="top_k", default="", help="comma list, e.g. 0,2,4,6,8")
    sweep_p.add_argument("--variants", default="", help="comma list of scoring variants")
    sweep_p.add_argument("--format", default="table", choices=["table", "json"])
    sweep_p.add_argument("--sequential", action="store_true")
    sweep_p.set_defaults(handler=cmd_sweep)

    stats_p = sub.add_parser("pool-stats", help="size, intent histogram, tool frequency")
    stats_p.add_argument("pool")
    stats_p.add_argument("--format", default="table", choices=["table", "json"])
    stats_p.set_defaults(handler=cmd_pool_stats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (StorageError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ExpmemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
