"""Stepwise experience recall: component scores, weighted total, exact top-k.

At every agent step the current history is scored against the entire pool
(exact scan — the pool is small by construction) and the top-k records are
returned as in-context demonstrations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .embedding import EmbeddingProvider, EmbeddingVector, trajectory_similarity
from .errors import ConfigError
from .pool import ExperiencePool, ExperienceRecord
from .providers import UNKNOWN_INTENT, IntentLabel, IntentRecognizer
from .trajectory import InteractionHistory, ToolChain, extract_toolchain, first_query, render_transcript


class Variant(str, Enum):
    FULL = "full"
    QUERY_BASED = "query-based"
    WITHOUT_S2 = "without-s2"
    WITHOUT_S3 = "without-s3"


@dataclass(frozen=True)
class ScoringWeights:
    lambda1: float = 1.0 / 3.0
    lambda2: float = 1.0 / 3.0
    lambda3: float = 1.0 / 3.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigError("must be non-negative", field=name)
        if self.lambda1 + self.lambda2 + self.lambda3 <= 0:
            raise ConfigError("at least one weight must be positive", field="lambda1")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)


@dataclass(frozen=True)
class RecallConfig:
    """Scoring weights, selection size and scoring variant.

    ``empty_toolchain_coverage`` fixes the coverage score before the current
    history has any tool call (vacuous coverage, 1.0 by default).
    ``unknown_intents_match`` controls whether two 'unknown' intents count
    as an intent match (the literal indicator says yes).
    """

    weights: ScoringWeights = field(default_factory=ScoringWeights)
    top_k: int = 4
    variant: Variant = Variant.FULL
    empty_toolchain_coverage: float = 1.0
    unknown_intents_match: bool = True

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError("must be >= 1", field="top_k")
        if self.empty_toolchain_coverage not in (0.0, 1.0):
            raise ConfigError("must be 0.0 or 1.0", field="empty_toolchain_coverage")
        # Fail at configuration time if masking would zero out all weight.
        effective_weights(self)


def effective_weights(cfg: RecallConfig) -> tuple[float, float, float]:
    """Per-variant weights: a masked component's mass is redistributed by
    renormalizing the remaining weights to sum 1."""
    l1, l2, l3 = cfg.weights.as_tuple()
    if cfg.variant is Variant.WITHOUT_S2:
        kept = l1 + l3
        if kept <= 0:
            raise ConfigError(
                "variant without-s2 leaves no positive weight", field="variant"
            )
        return (l1 / kept, 0.0, l3 / kept)
    if cfg.variant is Variant.WITHOUT_S3:
        kept = l1 + l2
        if kept <= 0:
            raise ConfigError(
                "variant without-s3 leaves no positive weight", field="variant"
            )
        return (l1 / kept, l2 / kept, 0.0)
    return (l1, l2, l3)


@dataclass(frozen=True)
class StepFeatures:
    """Features of the current history, extracted once per recall call."""

    history_embedding: EmbeddingVector
    query_embedding: EmbeddingVector
    toolchain: ToolChain
    intent: IntentLabel


def extract_step_features(
    history: InteractionHistory,
    embedder: EmbeddingProvider,
    intent_recognizer: IntentRecognizer,
) -> StepFeatures:
    """Embed the running transcript and opening query, infer intent, collect tools.

    Hoisted out of the per-candidate loop: features depend only on the
    history, so one extraction serves the whole scan.
    """
    query = first_query(history)
    return StepFeatures(
        history_embedding=embedder.embed(render_transcript(history)),
        query_embedding=embedder.embed(query),
        toolchain=extract_toolchain(history),
        intent=intent_recognizer.infer(query),
    )


@dataclass(frozen=True)
class ScoredCandidate:
    record_id: str
    s1: float
    s2: float
    s3: float
    total: float
    rank: int = 0

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "s1": self.s1,
            "s2": self.s2,
            "s3": self.s3,
            "total": self.total,
            "rank": self.rank,
        }


def toolchain_coverage(
    current: ToolChain, candidate: ToolChain, *, empty_coverage: float = 1.0
) -> float:
    """Fraction of the current history's distinct tools present in the candidate.

    Directionality is ignored: both chains are treated as unordered sets.
    An empty current chain yields ``empty_coverage`` (vacuous coverage), so
    that before any tool call the score does not discriminate candidates.
    """
    current_set = current.unordered_set
    if not current_set:
        return empty_coverage
    return len(current_set & candidate.unordered_set) / len(current_set)


def intent_match(
    current: IntentLabel, candidate: IntentLabel, *, unknown_matches: bool = True
) -> int:
    """Binary indicator that the inferred intents coincide."""
    if current.name != candidate.name:
        return 0
    if not unknown_matches and current.name == UNKNOWN_INTENT:
        return 0
    return 1


def relevance_score(
    features: StepFeatures, candidate: ExperienceRecord, cfg: RecallConfig
) -> ScoredCandidate:
    """Weighted three-component relevance of one pool record.

    The query-based variant compares first-query embeddings instead of
    whole-history embeddings; the without-* variants zero their component
    and renormalize the remaining weights.
    """
    w1, w2, w3 = effective_weights(cfg)
    if cfg.variant is Variant.QUERY_BASED:
        s1 = trajectory_similarity(features.query_embedding, candidate.query_embedding)
    else:
        s1 = trajectory_similarity(features.history_embedding, candidate.traj_embedding)
    s2 = 0.0
    if cfg.variant is not Variant.WITHOUT_S2:
        s2 = toolchain_coverage(
            features.toolchain,
            candidate.toolchain,
            empty_coverage=cfg.empty_toolchain_coverage,
        )
    s3 = 0.0
    if cfg.variant is not Variant.WITHOUT_S3:
        s3 = float(
            intent_match(
                features.intent,
                candidate.intent,
                unknown_matches=cfg.unknown_intents_match,
            )
        )
    total = w1 * s1 + w2 * s2 + w3 * s3
    return ScoredCandidate(
        record_id=candidate.record_id, s1=s1, s2=s2, s3=s3, total=total
    )


def recall_top_k(
    pool: ExperiencePool | Sequence[ExperienceRecord],
    features: StepFeatures,
    cfg: RecallConfig,
) -> list[ScoredCandidate]:
    """Score the entire pool, sort, and return the best min(k, pool size).

    Sort order: total descending, then inserted_at descending (recency),
    then record_id ascending. An empty pool returns an empty list — the
    agent then acts zero-shot. The pool is never modified.
    """
    records = pool.snapshot() if isinstance(pool, ExperiencePool) else tuple(pool)
    if not records:
        return []
    scored = [(relevance_score(features, record, cfg), record) for record in records]
    scored.sort(key=lambda pair: (-pair[0].total, -pair[1].inserted_at, pair[1].record_id))
    top = scored[: cfg.top_k]
    return [
        ScoredCandidate(
            record_id=cand.record_id,
            s1=cand.s1,
            s2=cand.s2,
            s3=cand.s3,
            total=cand.total,
            rank=position,
        )
        for position, (cand, _) in enumerate(top, start=1)
    ]


def dump_scored(candidates: Sequence[ScoredCandidate]) -> str:
    """Line-delimited JSON export of scored candidates (ablation analysis)."""
    return "\n".join(json.dumps(c.to_dict(), ensure_ascii=False) for c in candidates)
