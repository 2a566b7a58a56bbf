"""Synthetic task family for offline runs.

Each template hides its answer behind a 2-3-tool chain, and the scripted
agent only knows which chain to run when a same-template demonstration shows
up in its recalled examples — so retrieval quality causally determines
success. Query phrasing is engineered so that, against the seed pool alone,
a task's recall hits its template demo only when the task's style variant
matches the demo's; once a template has one online success, the success
carries a canonical intent label whose match score makes later recall of
that template essentially certain. That yields the rising batch-accuracy
curve of a self-improving run.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

from .harness import CURRENT_HEADER, DEMOS_HEADER, SimTool
from .providers import (
    CallableChatProvider,
    ChatMessage,
    IntentCatalog,
    IntentLabel,
    KeywordIntentRecognizer,
    LenientEvaluator,
)
from .trajectory import (
    Action,
    InteractionHistory,
    Observation,
    TaskSpec,
    Trajectory,
    append_step,
)

NOISE_TEMPLATE = "noise"

# Phrase sizes are tuned against the hashing embedder so that, at step 0,
# seed(template, variant) outscores same-variant decoys, which in turn
# outscore variant-mismatched seeds. Word repetition amplifies matched-token
# contributions relative to the fixed transcript chatter.
_VARIANT_WORDS = 8
_TOPIC_WORDS = 6
_PHRASE_REPEATS = 3
_DECOY_PAD = 8


def _repeated(words: list[str]) -> str:
    return " ".join(" ".join(words) for _ in range(_PHRASE_REPEATS))


def _variant_phrase(variant: int) -> str:
    return _repeated([f"style{variant}w{j}" for j in range(_VARIANT_WORDS)])


def _template_phrase(template: int) -> str:
    return _repeated([f"topic{template}w{j}" for j in range(_TOPIC_WORDS)])


def _noise_phrase() -> str:
    return "misc0 misc1 misc2 misc3"


def intent_name(template: int) -> str:
    return f"intent{template}"


def template_chain(template: int) -> list[str]:
    """The tool chain that solves a template: 2 tools, 3 for odd templates."""
    chain = [f"lookup{template}"]
    if template % 2 == 1:
        chain.append(f"verify{template}")
    chain.append(f"resolve{template}")
    return chain


def lookup_code(template: int, key: str) -> str:
    return f"c{template}{key}"


def reference_answer(template: int, key: str) -> str:
    return f"v{template}x{key}"


def task_query(template: int, variant: int, key: str) -> str:
    """Canonical live-task phrasing; carries the intent marker."""
    return (
        f"category {intent_name(template)} | please work out the task "
        f"{_variant_phrase(variant)} {_template_phrase(template)} key {key}"
    )


def seed_query(template: int, variant: int, key: str) -> str:
    """Seed-demo phrasing: same topic and style words, no intent marker."""
    return (
        f"please work out the task {_variant_phrase(variant)} "
        f"{_template_phrase(template)} key {key}"
    )


def decoy_query(variant: int, index: int) -> str:
    pad = " ".join(f"pad{index}x{j}" for j in range(_DECOY_PAD))
    return f"{_variant_phrase(variant)} {_noise_phrase()} {pad} key kd{index}"


def _key_from_code(template: int, code: str) -> str:
    # codes look like "c<template><key>" or "okc<template><key>"
    if code.startswith("ok"):
        code = code[2:]
    prefix = f"c{template}"
    return code[len(prefix):] if code.startswith(prefix) else code


def build_tools(n_templates: int) -> list[SimTool]:
    tools: list[SimTool] = []
    for t in range(n_templates):
        tools.append(
            SimTool(
                name=f"lookup{t}",
                description=f"fetch the access code for a topic{t} key",
                fn=lambda args, t=t: lookup_code(t, args["key"]),
            )
        )
        if t % 2 == 1:
            tools.append(
                SimTool(
                    name=f"verify{t}",
                    description=f"validate a topic{t} access code",
                    fn=lambda args, t=t: f"ok{args['code']}",
                )
            )
        tools.append(
            SimTool(
                name=f"resolve{t}",
                description=f"resolve a topic{t} access code to the final value",
                fn=lambda args, t=t: reference_answer(t, _key_from_code(t, args["code"])),
            )
        )
    return tools


def build_task(template: int, variant: int, key: str, max_steps: int = 6) -> TaskSpec:
    return TaskSpec(
        goal_text=task_query(template, variant, key),
        max_steps=max_steps,
        reference_answer=reference_answer(template, key),
        template_id=f"t{template}",
    )


def _seed_trajectory(template: int, variant: int, key: str, max_steps: int = 6) -> Trajectory:
    """A worked demonstration of one template, phrased without the intent marker."""
    task = TaskSpec(
        goal_text=seed_query(template, variant, key),
        max_steps=max_steps,
        reference_answer=reference_answer(template, key),
        template_id=f"t{template}",
    )
    history = InteractionHistory.start(Observation.user(task.goal_text), max_actions=max_steps)
    value = key
    for i, tool in enumerate(template_chain(template)):
        if i == 0:
            action = Action.call(tool, {"key": key})
            value = lookup_code(template, key)
        else:
            action = Action.call(tool, {"code": value})
            value = f"ok{value}" if tool.startswith("verify") else reference_answer(template, key)
        history = append_step(history, action, Observation.tool(value, tool))
    answer = reference_answer(template, key)
    history = history.with_final_action(Action.respond(answer))
    return Trajectory(history=history, task=task, final_answer=answer)


def _decoy_trajectory(variant: int, index: int, max_steps: int = 6) -> Trajectory:
    task = TaskSpec(
        goal_text=decoy_query(variant, index),
        max_steps=max_steps,
        template_id=NOISE_TEMPLATE,
    )
    history = InteractionHistory.start(Observation.user(task.goal_text), max_actions=max_steps)
    history = history.with_final_action(Action.respond("noted"))
    return Trajectory(history=history, task=task, final_answer="noted")


@dataclass(frozen=True)
class SyntheticWorld:
    tasks: tuple[TaskSpec, ...]
    tools: tuple[SimTool, ...]
    seed_trajectories: tuple[Trajectory, ...]
    catalog: IntentCatalog
    keyword_map: dict[str, str]
    n_templates: int
    n_variants: int

    def make_intent_recognizer(self) -> KeywordIntentRecognizer:
        return KeywordIntentRecognizer(self.catalog, self.keyword_map)

    def make_evaluator(self) -> LenientEvaluator:
        return LenientEvaluator()

    def make_agent(self) -> CallableChatProvider:
        return CallableChatProvider(_template_following_policy)


def build_world(
    n_templates: int = 5,
    n_variants: int = 8,
    n_tasks: int = 600,
    decoys_per_variant: int = 4,
    rng_seed: int = 7,
    max_steps: int = 6,
) -> SyntheticWorld:
    """Construct tasks, tools, seed demonstrations and the intent set.

    Seed demos cover every template with one fixed style variant each;
    decoys cover every variant several times so that a variant-mismatched
    template demo is crowded out of the top-4 at the start.
    """
    rng = random.Random(rng_seed)
    tasks = tuple(
        build_task(rng.randrange(n_templates), rng.randrange(n_variants), f"k{i}", max_steps)
        for i in range(n_tasks)
    )
    seeds = [
        _seed_trajectory(t, t % n_variants, f"s{t}", max_steps) for t in range(n_templates)
    ]
    decoys = [
        _decoy_trajectory(v, v * decoys_per_variant + d, max_steps)
        for v in range(n_variants)
        for d in range(decoys_per_variant)
    ]
    catalog = IntentCatalog(
        IntentLabel(intent_name(t), f"questions about topic{t}") for t in range(n_templates)
    )
    keyword_map = {f"category {intent_name(t)}": intent_name(t) for t in range(n_templates)}
    return SyntheticWorld(
        tasks=tasks,
        tools=tuple(build_tools(n_templates)),
        seed_trajectories=tuple(seeds + decoys),
        catalog=catalog,
        keyword_map=keyword_map,
        n_templates=n_templates,
        n_variants=n_variants,
    )


_TEMPLATE_MARKER_RE = re.compile(r"\btopic(\d+)w0\b")
_KEY_RE = re.compile(r"\bkey (\S+)")


def _template_following_policy(messages: list[ChatMessage]) -> str:
    """Scripted agent: run the template's chain iff a same-template demo is shown.

    At the first step it commits — with no same-template demonstration in
    the prompt it answers wrong immediately. Mid-episode it continues its
    chain from the transcript and finally repeats the last tool result as
    the answer.
    """
    system = next((m.content for m in messages if m.role == "system"), "")
    user = next((m.content for m in messages if m.role == "user"), "")
    current = user.split(CURRENT_HEADER, 1)[-1]
    first_user_line = next(
        (line for line in current.splitlines() if line.startswith("user: ")), ""
    )
    marker = _TEMPLATE_MARKER_RE.search(first_user_line)
    key_match = _KEY_RE.search(first_user_line)
    if marker is None or key_match is None:
        return "Answer: unknown"
    template = int(marker.group(1))
    key = key_match.group(1)
    chain = template_chain(template)
    tool_results = [
        line.split(": ", 1)[1]
        for line in current.splitlines()
        if line.startswith("tool[")
    ]
    if not tool_results:
        demos = system.split(DEMOS_HEADER, 1)[1] if DEMOS_HEADER in system else ""
        if f"topic{template}w0" not in demos:
            return "Answer: unknown"
        return f"Action: {chain[0]}[key={key}]"
    if len(tool_results) < len(chain):
        return f"Action: {chain[len(tool_results)]}[code={tool_results[-1]}]"
    return f"Answer: {tool_results[-1]}"
