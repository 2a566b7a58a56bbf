"""Episode execution and the batched self-improvement protocol.

The agent loop follows the classic observation/thought/action cycle: at each
step the current history is used to recall demonstrations, the agent replies
in a one-line action grammar, tool calls are executed against simulated
tools, and a final response ends the episode. Finished episodes are judged
and (when they pass) fed back into the experience pool.
"""

from __future__ import annotations

import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from .embedding import EmbeddingProvider
from .errors import ProviderError
from .metrics import accuracy, moving_average_3
from .pool import ExperiencePool, ExperienceRecord, insert_if_match
from .providers import (
    ChatMessage,
    ChatProvider,
    Evaluator,
    IntentRecognizer,
    Judgment,
    Verdict,
)
from .recall import RecallConfig, extract_step_features, recall_top_k
from .trajectory import (
    Action,
    InteractionHistory,
    Observation,
    TaskSpec,
    Trajectory,
    append_step,
    render_transcript,
)

logger = logging.getLogger(__name__)

DEMOS_HEADER = "## Demonstrations"
CURRENT_HEADER = "## Current interaction"

UPDATE_EPISODE = "episode"
UPDATE_BATCH = "batch"
UPDATE_NONE = "none"


@dataclass(frozen=True)
class SimTool:
    """A deterministic simulated tool.

    ``fn`` maps an argument dict to result text; any exception it raises is
    converted into a tool-error observation rather than crashing the loop.
    """

    name: str
    description: str
    fn: Callable[[dict[str, str]], str]

    def apply(self, arguments: dict[str, str]) -> Observation:
        try:
            return Observation.tool(self.fn(dict(arguments)), self.name)
        except Exception as exc:
            return Observation.tool(f"tool error: {exc}", self.name)


@dataclass(frozen=True)
class EpisodeOutcome:
    trajectory: Trajectory
    verdict: Judgment
    steps_used: int
    recalled_ids_per_step: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class BatchReport:
    batch_index: int
    size: int
    successes: int
    accuracy: float
    smoothed: float | None = None
    provider_failures: int = 0


_ACTION_RE = re.compile(r"^\s*Action:\s*([A-Za-z_][\w.-]*)\s*\[(.*)\]\s*$")
_ANSWER_RE = re.compile(r"^\s*Answer:\s*(.*)$")


def parse_action(text: str) -> Action:
    """Parse agent output under the one-line action grammar.

    ``Action: <tool>[k1=v1, k2=v2]`` becomes a tool call; ``Answer: <text>``
    becomes a response. The first matching line wins (earlier lines may be
    free-form reasoning). Arguments are comma-separated ``k=v`` tokens;
    tokens without ``=`` are ignored. Unparseable output falls back to a
    response carrying the raw text.
    """
    for line in text.splitlines():
        m = _ACTION_RE.match(line)
        if m:
            args: dict[str, str] = {}
            raw = m.group(2).strip()
            if raw:
                for token in raw.split(","):
                    if "=" in token:
                        key, value = token.split("=", 1)
                        args[key.strip()] = value.strip()
            return Action.call(m.group(1), args)
        m = _ANSWER_RE.match(line)
        if m:
            return Action.respond(m.group(1).strip())
    return Action.respond(text.strip())


def render_demonstrations(records: Sequence[ExperienceRecord]) -> str:
    """Demonstration block, best-scored record first."""
    sections = []
    for i, record in enumerate(records, start=1):
        sections.append(
            f"### Demonstration {i}\n{render_transcript(record.trajectory.history)}"
        )
    return "\n\n".join(sections)


def render_agent_messages(
    task: TaskSpec,
    history: InteractionHistory,
    tools: Sequence[SimTool],
    demonstrations: Sequence[ExperienceRecord],
) -> list[ChatMessage]:
    """Build the agent prompt: instructions + tools (+ demos), then the transcript.

    With no demonstrations the prompt contains no demonstration block at all
    (the zero-shot setting).
    """
    tool_lines = "\n".join(f"- {t.name}: {t.description}" for t in tools)
    system = (
        "You are a tool-using assistant. Solve the user's task step by step.\n\n"
        f"Available tools:\n{tool_lines}\n\n"
        "Reply with exactly one line in one of these forms:\n"
        "Action: <tool>[k1=v1, k2=v2]\n"
        "Answer: <final answer>"
    )
    if demonstrations:
        system += f"\n\n{DEMOS_HEADER}\n{render_demonstrations(demonstrations)}"
    user = (
        f"{CURRENT_HEADER}\n{render_transcript(history)}\n\n"
        "What is your next action?"
    )
    return [ChatMessage("system", system), ChatMessage("user", user)]


def run_episode(
    task: TaskSpec,
    *,
    tools: Sequence[SimTool],
    pool: ExperiencePool,
    cfg: RecallConfig | None,
    agent: ChatProvider,
    evaluator: Evaluator,
    embedder: EmbeddingProvider,
    intent_recognizer: IntentRecognizer,
) -> EpisodeOutcome:
    """Run one episode to termination and judge it.

    ``cfg=None`` disables recall entirely (zero-shot). Unknown tools yield a
    tool-error observation and the loop continues; reaching the horizon
    without a response is judged on the absent answer (no-match).
    """
    by_name = {t.name: t for t in tools}
    if len(by_name) != len(tools):
        raise ValueError("tool names must be unique")
    history = InteractionHistory.start(
        Observation.user(task.goal_text), max_actions=task.max_steps
    )
    recalled_per_step: list[tuple[str, ...]] = []
    final_answer: str | None = None
    while history.action_count < task.max_steps:
        demonstrations: list[ExperienceRecord] = []
        if cfg is not None and len(pool) > 0:
            features = extract_step_features(history, embedder, intent_recognizer)
            candidates = recall_top_k(pool, features, cfg)
            demonstrations = [
                record
                for record in (pool.get(c.record_id) for c in candidates)
                if record is not None
            ]
            recalled_per_step.append(tuple(c.record_id for c in candidates))
        else:
            recalled_per_step.append(())
        reply = agent.complete(
            render_agent_messages(task, history, tools, demonstrations)
        )
        action = parse_action(reply)
        if action.kind == "respond":
            final_answer = action.text
            history = history.with_final_action(action)
            break
        tool = by_name.get(action.tool_name or "")
        if tool is None:
            observation = Observation.tool(
                f"error: unknown tool '{action.tool_name}'", action.tool_name or "?"
            )
        else:
            observation = tool.apply(action.arguments)
        history = append_step(history, action, observation)
    trajectory = Trajectory(history=history, task=task, final_answer=final_answer)
    verdict = evaluator.evaluate(task, final_answer)
    return EpisodeOutcome(
        trajectory=trajectory,
        verdict=verdict,
        steps_used=history.action_count,
        recalled_ids_per_step=tuple(recalled_per_step),
    )


def split_batches(count: int, batches: int) -> list[int]:
    """Near-equal batch sizes; the remainder is spread over the first batches."""
    if batches < 1:
        raise ValueError("batches must be >= 1")
    if batches > count:
        raise ValueError(f"cannot split {count} tasks into {batches} non-empty batches")
    base, remainder = divmod(count, batches)
    return [base + 1 if j < remainder else base for j in range(batches)]


def _failed_outcome(task: TaskSpec, exc: Exception) -> EpisodeOutcome:
    history = InteractionHistory.start(
        Observation.user(task.goal_text), max_actions=task.max_steps
    )
    return EpisodeOutcome(
        trajectory=Trajectory(history=history, task=task, final_answer=None),
        verdict=Judgment(Verdict.NO_MATCH, f"provider failure: {exc}"),
        steps_used=0,
        recalled_ids_per_step=(),
    )


def run_self_improvement(
    tasks: Sequence[TaskSpec],
    batches: int,
    pool: ExperiencePool,
    cfg: RecallConfig | None,
    *,
    agent: ChatProvider,
    evaluator: Evaluator,
    embedder: EmbeddingProvider,
    intent_recognizer: IntentRecognizer,
    tools: Sequence[SimTool],
    rng_seed: int = 0,
    update_granularity: str = UPDATE_BATCH,
    workers: int = 1,
    episode_sink: Callable[[EpisodeOutcome], None] | None = None,
) -> list[BatchReport]:
    """Shuffle tasks into batches; evaluate each batch, then absorb its successes.

    Batch-granular updates (the default) freeze the pool for the whole batch
    and insert all matched trajectories before the next batch; episode
    granularity updates the pool after every episode (live mode) and always
    runs sequentially. Provider failures fail the episode, are counted, and
    the run continues. With a fixed seed and deterministic providers the run
    is bit-reproducible.
    """
    if not tasks:
        raise ValueError("tasks must be non-empty")
    if update_granularity not in (UPDATE_EPISODE, UPDATE_BATCH, UPDATE_NONE):
        raise ValueError(f"unknown update granularity: {update_granularity!r}")
    shuffled = list(tasks)
    random.Random(rng_seed).shuffle(shuffled)
    sizes = split_batches(len(shuffled), batches)

    def attempt(task: TaskSpec) -> tuple[EpisodeOutcome, bool]:
        try:
            outcome = run_episode(
                task,
                tools=tools,
                pool=pool,
                cfg=cfg,
                agent=agent,
                evaluator=evaluator,
                embedder=embedder,
                intent_recognizer=intent_recognizer,
            )
            return outcome, False
        except ProviderError as exc:
            logger.warning("episode failed on provider error: %s", exc)
            return _failed_outcome(task, exc), True

    reports: list[BatchReport] = []
    cursor = 0
    for batch_index, size in enumerate(sizes, start=1):
        batch_tasks = shuffled[cursor : cursor + size]
        cursor += size
        results: list[tuple[EpisodeOutcome, bool]] = []
        if update_granularity == UPDATE_EPISODE:
            for task in batch_tasks:
                outcome, failed = attempt(task)
                results.append((outcome, failed))
                insert_if_match(
                    pool, outcome.trajectory, outcome.verdict, embedder, intent_recognizer
                )
        elif workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                results = list(executor.map(attempt, batch_tasks))
        else:
            results = [attempt(task) for task in batch_tasks]
        outcomes = [outcome for outcome, _ in results]
        if update_granularity == UPDATE_BATCH:
            for outcome in outcomes:
                insert_if_match(
                    pool, outcome.trajectory, outcome.verdict, embedder, intent_recognizer
                )
        if episode_sink is not None:
            for outcome in outcomes:
                episode_sink(outcome)
        reports.append(
            BatchReport(
                batch_index=batch_index,
                size=len(outcomes),
                successes=sum(1 for o in outcomes if o.verdict.is_match),
                accuracy=accuracy([o.verdict.is_match for o in outcomes]),
                provider_failures=sum(1 for _, failed in results if failed),
            )
        )
    smoothed = moving_average_3([r.accuracy for r in reports])
    return [replace(r, smoothed=s) for r, s in zip(reports, smoothed)]
