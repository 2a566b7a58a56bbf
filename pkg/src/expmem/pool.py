"""Structured experience records, the bounded pool, and its persistence.

Pool files are line-delimited JSON: a header line
``{"format_version", "embedder_id", "dim", "capacity", "eviction", "next_seq"}``
followed by one record per line. Unknown fields are tolerated on load;
structural violations reject the whole file (no partial pools).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .embedding import EmbeddingProvider, EmbeddingVector
from .errors import MalformedRecordError, StorageError
from .providers import Evaluator, IntentLabel, IntentRecognizer, Judgment
from .trajectory import (
    InteractionHistory,
    TaskSpec,
    ToolChain,
    Trajectory,
    extract_toolchain,
    first_query,
    render_transcript,
    trajectory_from_dict,
    trajectory_to_dict,
)

FORMAT_VERSION = 1
EVICT_FIFO = "fifo"
EVICT_REJECT_NEW = "reject-new"


@dataclass(frozen=True)
class ExperienceRecord:
    """One stored experience: the raw trajectory plus its retrieval features."""

    trajectory: Trajectory
    traj_embedding: EmbeddingVector
    query_embedding: EmbeddingVector
    intent: IntentLabel
    toolchain: ToolChain
    inserted_at: int
    record_id: str

    def __post_init__(self):
        if self.traj_embedding.dim != self.query_embedding.dim:
            raise ValueError("trajectory and query embeddings must share a dimension")
        if self.toolchain != extract_toolchain(self.trajectory.history):
            raise ValueError("toolchain does not match the trajectory's tool calls")
        if not self.record_id:
            raise ValueError("record_id must be non-empty")


def default_record_id(seq: int) -> str:
    return f"rec-{seq:06d}"


def extract_experience(
    trajectory: Trajectory,
    embedder: EmbeddingProvider,
    intent_recognizer: IntentRecognizer,
    *,
    seq: int = 0,
    record_id: str | None = None,
) -> ExperienceRecord:
    """Build the structured record for a completed trajectory.

    The trajectory embedding covers the full rendered transcript; the query
    embedding covers the opening user message only. Provider failures
    propagate — callers must not insert a partially extracted record.
    """
    query = first_query(trajectory.history)
    return ExperienceRecord(
        trajectory=trajectory,
        traj_embedding=embedder.embed(render_transcript(trajectory.history)),
        query_embedding=embedder.embed(query),
        intent=intent_recognizer.infer(query),
        toolchain=extract_toolchain(trajectory.history),
        inserted_at=seq,
        record_id=record_id or default_record_id(seq),
    )


class ExperiencePool:
    """Bounded, insert-gated collection of experience records.

    Concurrency: many readers against ``snapshot()``, one writer at a time;
    all mutation happens under an internal lock.
    """

    def __init__(
        self,
        capacity: int = 1000,
        *,
        dim: int | None = None,
        embedder_id: str | None = None,
        eviction: str = EVICT_FIFO,
    ):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if eviction not in (EVICT_FIFO, EVICT_REJECT_NEW):
            raise ValueError(f"unknown eviction policy: {eviction!r}")
        self.capacity = capacity
        self.eviction = eviction
        self.dim = dim
        self.embedder_id = embedder_id
        self._records: list[ExperienceRecord] = []
        self._next_seq = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._records)

    @property
    def next_seq(self) -> int:
        return self._next_seq

    def snapshot(self) -> tuple[ExperienceRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def get(self, record_id: str) -> ExperienceRecord | None:
        with self._lock:
            for record in self._records:
                if record.record_id == record_id:
                    return record
        return None

    def _check_dim(self, record: ExperienceRecord) -> None:
        if self.dim is None:
            self.dim = record.traj_embedding.dim
        elif record.traj_embedding.dim != self.dim:
            raise ValueError(
                f"record dim {record.traj_embedding.dim} does not match pool dim {self.dim}"
            )

    def insert(self, record: ExperienceRecord) -> ExperienceRecord | None:
        """Insert, restamping the sequence number and default record id.

        Returns the stored record, or None when the reject-new policy drops
        it at capacity. Under FIFO the oldest record is evicted instead.
        """
        with self._lock:
            self._check_dim(record)
            if len(self._records) >= self.capacity and self.eviction == EVICT_REJECT_NEW:
                return None
            seq = self._next_seq
            self._next_seq += 1
            record_id = record.record_id
            if record_id == default_record_id(record.inserted_at):
                record_id = default_record_id(seq)
            stamped = replace(record, inserted_at=seq, record_id=record_id)
            self._records.append(stamped)
            while len(self._records) > self.capacity:
                self._records.pop(0)
            return stamped

    def add_trajectory(
        self,
        trajectory: Trajectory,
        embedder: EmbeddingProvider,
        intent_recognizer: IntentRecognizer,
    ) -> ExperienceRecord | None:
        """Extract and insert without any gate (seeding, pre-judged successes)."""
        record = extract_experience(trajectory, embedder, intent_recognizer)
        return self.insert(record)

    def seed(
        self,
        trajectories: Iterable[Trajectory],
        embedder: EmbeddingProvider,
        intent_recognizer: IntentRecognizer,
    ) -> int:
        """Insert demonstration trajectories ahead of any online record."""
        count = 0
        for trajectory in trajectories:
            if self.add_trajectory(trajectory, embedder, intent_recognizer) is not None:
                count += 1
        return count

    def stats(self) -> dict:
        """Size, intent histogram and tool frequency (for the CLI)."""
        with self._lock:
            records = list(self._records)
        intents: dict[str, int] = {}
        tools: dict[str, int] = {}
        for record in records:
            intents[record.intent.name] = intents.get(record.intent.name, 0) + 1
            for tool in record.toolchain.sequence:
                tools[tool] = tools.get(tool, 0) + 1
        return {
            "size": len(records),
            "capacity": self.capacity,
            "intents": dict(sorted(intents.items())),
            "tools": dict(sorted(tools.items())),
        }


def update_pool(
    pool: ExperiencePool,
    history: InteractionHistory,
    final_answer: str | None,
    task: TaskSpec,
    evaluator: Evaluator,
    embedder: EmbeddingProvider,
    intent_recognizer: IntentRecognizer,
) -> ExperiencePool:
    """Gated pool update: evaluate the finished episode, insert on a match.

    On no-match, and on any provider failure (which propagates), the pool is
    left unchanged.
    """
    verdict = evaluator.evaluate(task, final_answer)
    if verdict.is_match:
        trajectory = Trajectory(history=history, task=task, final_answer=final_answer)
        record = extract_experience(trajectory, embedder, intent_recognizer)
        pool.insert(record)
    return pool


def insert_if_match(
    pool: ExperiencePool,
    trajectory: Trajectory,
    judgment: Judgment,
    embedder: EmbeddingProvider,
    intent_recognizer: IntentRecognizer,
) -> ExperienceRecord | None:
    """Insert an already-judged episode; the same gate as update_pool."""
    if not judgment.is_match:
        return None
    record = extract_experience(trajectory, embedder, intent_recognizer)
    return pool.insert(record)


def _record_to_dict(record: ExperienceRecord) -> dict:
    return {
        "record_id": record.record_id,
        "inserted_at": record.inserted_at,
        "intent": record.intent.name,
        "toolchain": list(record.toolchain.sequence),
        "traj_embedding": list(record.traj_embedding.values),
        "query_embedding": list(record.query_embedding.values),
        "trajectory": trajectory_to_dict(record.trajectory),
    }


def _record_from_dict(data: dict) -> ExperienceRecord:
    trajectory = trajectory_from_dict(data["trajectory"])
    return ExperienceRecord(
        trajectory=trajectory,
        traj_embedding=EmbeddingVector.from_array(data["traj_embedding"]),
        query_embedding=EmbeddingVector.from_array(data["query_embedding"]),
        intent=IntentLabel(data["intent"]),
        toolchain=ToolChain(sequence=tuple(data["toolchain"])),
        inserted_at=data["inserted_at"],
        record_id=data["record_id"],
    )


def save_pool(pool: ExperiencePool, destination: str | Path) -> None:
    """Write the pool with a header line, one record per line."""
    header = {
        "format_version": FORMAT_VERSION,
        "embedder_id": pool.embedder_id,
        "dim": pool.dim,
        "capacity": pool.capacity,
        "eviction": pool.eviction,
        "next_seq": pool.next_seq,
    }
    records = pool.snapshot()
    try:
        with open(destination, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, ensure_ascii=False))
            fh.write("\n")
            for record in records:
                fh.write(json.dumps(_record_to_dict(record), ensure_ascii=False))
                fh.write("\n")
    except OSError as exc:
        raise StorageError(f"cannot write pool file: {exc}") from exc


def load_pool(source: str | Path, *, expected_embedder_id: str | None = None) -> ExperiencePool:
    """Load a pool file atomically; any malformed line rejects the whole file."""
    try:
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise StorageError(f"cannot read pool file: {exc}") from exc
    if not lines:
        raise MalformedRecordError("empty pool file (missing header)", line_number=1)
    try:
        header = json.loads(lines[0])
        version = header["format_version"]
        capacity = header["capacity"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MalformedRecordError(f"bad header: {exc}", line_number=1) from exc
    if version != FORMAT_VERSION:
        raise MalformedRecordError(
            f"unsupported format_version {version}", line_number=1
        )
    embedder_id = header.get("embedder_id")
    if (
        expected_embedder_id is not None
        and embedder_id is not None
        and embedder_id != expected_embedder_id
    ):
        raise StorageError(
            f"pool was embedded with {embedder_id!r}, expected {expected_embedder_id!r}"
        )
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            records.append(_record_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedRecordError(str(exc), line_number=lineno) from exc
    dim = header.get("dim")
    for lineno, record in enumerate(records, start=2):
        if dim is not None and record.traj_embedding.dim != dim:
            raise MalformedRecordError(
                f"record dim {record.traj_embedding.dim} does not match header dim {dim}",
                line_number=lineno,
            )
    if len(records) > capacity:
        raise MalformedRecordError(
            f"{len(records)} records exceed capacity {capacity}", line_number=1
        )
    seen_ids: set[str] = set()
    last_seq = -1
    for lineno, record in enumerate(records, start=2):
        if record.record_id in seen_ids:
            raise MalformedRecordError(
                f"duplicate record_id {record.record_id}", line_number=lineno
            )
        seen_ids.add(record.record_id)
        if record.inserted_at <= last_seq:
            raise MalformedRecordError(
                "inserted_at values must strictly increase", line_number=lineno
            )
        last_seq = record.inserted_at
    pool = ExperiencePool(
        capacity=capacity,
        dim=dim,
        embedder_id=embedder_id,
        eviction=header.get("eviction", EVICT_FIFO),
    )
    pool._records = records
    pool._next_seq = header.get("next_seq", last_seq + 1)
    return pool
