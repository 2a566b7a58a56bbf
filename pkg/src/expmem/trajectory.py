"""Interaction vocabulary: observations, actions, histories, trajectories.

All types are immutable values; "mutation" (appending a step) returns a new
history. The on-disk trajectory format is one JSON object per line with
fields ``{task, steps[], final_answer}``; see ``trajectory_to_dict`` for the
step encodings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import AlternationError, HorizonExceededError, MalformedRecordError

USER_MESSAGE = "user-message"
TOOL_RESULT = "tool-result"
RESPOND = "respond"
TOOL_CALL = "tool-call"


@dataclass(frozen=True)
class Observation:
    """A single input to the agent: a user message or a tool result."""

    kind: str
    text: str
    source_tool: str | None = None

    def __post_init__(self):
        if self.kind not in (USER_MESSAGE, TOOL_RESULT):
            raise ValueError(f"unknown observation kind: {self.kind!r}")
        if self.kind == TOOL_RESULT:
            if not self.source_tool:
                raise ValueError("tool-result observation requires source_tool")
        elif self.source_tool is not None:
            raise ValueError("user-message observation must not carry source_tool")

    @classmethod
    def user(cls, text: str) -> Observation:
        return cls(kind=USER_MESSAGE, text=text)

    @classmethod
    def tool(cls, text: str, source_tool: str) -> Observation:
        return cls(kind=TOOL_RESULT, text=text, source_tool=source_tool)


@dataclass(frozen=True)
class Action:
    """A single agent decision: a natural-language response or a tool call.

    Tool arguments are ordered name -> value text pairs; adapters that need
    typed values parse them downstream.
    """

    kind: str
    text: str | None = None
    tool_name: str | None = None
    arguments: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == RESPOND:
            if self.text is None:
                raise ValueError("respond action requires text")
            if self.tool_name is not None or self.arguments:
                raise ValueError("respond action must not carry tool fields")
        elif self.kind == TOOL_CALL:
            if not self.tool_name:
                raise ValueError("tool-call action requires a non-empty tool_name")
            if self.text is not None:
                raise ValueError("tool-call action must not carry response text")
        else:
            raise ValueError(f"unknown action kind: {self.kind!r}")

    @classmethod
    def respond(cls, text: str) -> Action:
        return cls(kind=RESPOND, text=text)

    @classmethod
    def call(cls, tool_name: str, arguments: dict[str, str] | None = None) -> Action:
        return cls(kind=TOOL_CALL, tool_name=tool_name, arguments=dict(arguments or {}))


@dataclass(frozen=True)
class TaskSpec:
    """A user goal plus the episode horizon and optional ground truth."""

    goal_text: str
    max_steps: int
    reference_answer: str | None = None
    template_id: str | None = None

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class InteractionHistory:
    """Strictly alternating observation/action sequence, starting with a user message.

    ``max_actions``, when set, bounds the number of actions (the owning
    task's horizon); ``append_step`` enforces it.
    """

    steps: tuple[Observation | Action, ...]
    max_actions: int | None = None

    def __post_init__(self):
        if not self.steps:
            raise ValueError("history must be non-empty")
        first = self.steps[0]
        if not isinstance(first, Observation) or first.kind != USER_MESSAGE:
            raise ValueError("history must start with a user-message observation")
        for i, step in enumerate(self.steps):
            expected = Observation if i % 2 == 0 else Action
            if not isinstance(step, expected):
                raise AlternationError(
                    f"step {i} must be {expected.__name__}, got {type(step).__name__}"
                )
        if self.max_actions is not None and self.action_count > self.max_actions:
            raise HorizonExceededError(
                f"history has {self.action_count} actions, horizon is {self.max_actions}"
            )

    @classmethod
    def start(cls, opening: Observation, max_actions: int | None = None) -> InteractionHistory:
        return cls(steps=(opening,), max_actions=max_actions)

    @property
    def observations(self) -> tuple[Observation, ...]:
        return tuple(s for s in self.steps if isinstance(s, Observation))

    @property
    def actions(self) -> tuple[Action, ...]:
        return tuple(s for s in self.steps if isinstance(s, Action))

    @property
    def action_count(self) -> int:
        return len(self.steps) // 2

    @property
    def ends_in_observation(self) -> bool:
        return isinstance(self.steps[-1], Observation)

    def with_final_action(self, action: Action) -> InteractionHistory:
        """Append a terminating action with no observation after it."""
        if not self.ends_in_observation:
            raise AlternationError("history already ends in an action")
        if self.max_actions is not None and self.action_count >= self.max_actions:
            raise HorizonExceededError(f"horizon of {self.max_actions} actions reached")
        return InteractionHistory(steps=self.steps + (action,), max_actions=self.max_actions)


@dataclass(frozen=True)
class Trajectory:
    """A completed episode: history, the agent's final answer, and its task.

    The history is re-bound to the task's horizon on construction, so a
    trajectory that overran its task's max_steps cannot be represented.
    """

    history: InteractionHistory
    task: TaskSpec
    final_answer: str | None = None

    def __post_init__(self):
        if self.history.max_actions != self.task.max_steps:
            object.__setattr__(
                self,
                "history",
                InteractionHistory(steps=self.history.steps, max_actions=self.task.max_steps),
            )


@dataclass(frozen=True)
class ToolChain:
    """Ordered tool invocations with an unordered set view for coverage scoring."""

    sequence: tuple[str, ...]

    @property
    def unordered_set(self) -> frozenset[str]:
        return frozenset(self.sequence)

    def __bool__(self) -> bool:
        return bool(self.sequence)


def first_query(history: InteractionHistory) -> str:
    """The text of the opening user message (the query that gets embedded)."""
    return history.steps[0].text


def extract_toolchain(history: InteractionHistory) -> ToolChain:
    """Tool names of every tool-call action, in order, duplicates preserved."""
    names = tuple(
        a.tool_name for a in history.actions if a.kind == TOOL_CALL and a.tool_name
    )
    return ToolChain(sequence=names)


def append_step(
    history: InteractionHistory, action: Action, observation: Observation
) -> InteractionHistory:
    """Return a new history extended by one action/observation round."""
    if not history.ends_in_observation:
        raise AlternationError("history must end in an observation before appending")
    if history.max_actions is not None and history.action_count >= history.max_actions:
        raise HorizonExceededError(f"horizon of {history.max_actions} actions reached")
    return InteractionHistory(
        steps=history.steps + (action, observation), max_actions=history.max_actions
    )


def render_transcript(history: InteractionHistory) -> str:
    """Render a history as a role-prefixed transcript for embedding.

    One line per step:
      user message      -> ``user: <text>``
      respond action    -> ``assistant: <text>``
      tool-call action  -> ``assistant: <tool>(k=v, ...)``
      tool result       -> ``tool[<source>]: <text>``
    """
    lines = []
    for step in history.steps:
        if isinstance(step, Observation):
            if step.kind == USER_MESSAGE:
                lines.append(f"user: {step.text}")
            else:
                lines.append(f"tool[{step.source_tool}]: {step.text}")
        elif step.kind == RESPOND:
            lines.append(f"assistant: {step.text}")
        else:
            args = ", ".join(f"{k}={v}" for k, v in step.arguments.items())
            lines.append(f"assistant: {step.tool_name}({args})")
    return "\n".join(lines)


def _step_to_dict(step: Observation | Action) -> dict:
    if isinstance(step, Observation):
        if step.kind == USER_MESSAGE:
            return {"kind": USER_MESSAGE, "text": step.text}
        return {"kind": TOOL_RESULT, "text": step.text, "source_tool": step.source_tool}
    if step.kind == RESPOND:
        return {"kind": RESPOND, "text": step.text}
    return {"kind": TOOL_CALL, "tool_name": step.tool_name, "arguments": dict(step.arguments)}


def _step_from_dict(data: dict) -> Observation | Action:
    kind = data.get("kind")
    if kind == USER_MESSAGE:
        return Observation.user(data["text"])
    if kind == TOOL_RESULT:
        return Observation.tool(data["text"], data["source_tool"])
    if kind == RESPOND:
        return Action.respond(data["text"])
    if kind == TOOL_CALL:
        return Action.call(data["tool_name"], data.get("arguments", {}))
    raise ValueError(f"unknown step kind: {kind!r}")


def task_to_dict(task: TaskSpec) -> dict:
    return {
        "goal_text": task.goal_text,
        "max_steps": task.max_steps,
        "reference_answer": task.reference_answer,
        "template_id": task.template_id,
    }


def task_from_dict(data: dict) -> TaskSpec:
    return TaskSpec(
        goal_text=data["goal_text"],
        max_steps=data["max_steps"],
        reference_answer=data.get("reference_answer"),
        template_id=data.get("template_id"),
    )


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "task": task_to_dict(traj.task),
        "steps": [_step_to_dict(s) for s in traj.history.steps],
        "final_answer": traj.final_answer,
    }


def trajectory_from_dict(data: dict) -> Trajectory:
    task = task_from_dict(data["task"])
    steps = tuple(_step_from_dict(s) for s in data["steps"])
    history = InteractionHistory(steps=steps, max_actions=task.max_steps)
    return Trajectory(history=history, task=task, final_answer=data.get("final_answer"))


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    """Write trajectories as line-delimited JSON records."""
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(json.dumps(trajectory_to_dict(traj), ensure_ascii=False))
            fh.write("\n")


def read_trajectories(path: str | Path) -> list[Trajectory]:
    """Read a line-delimited trajectory file; fails atomically on bad lines."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(trajectory_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedRecordError(str(exc), line_number=lineno) from exc
    return out
