"""Model-backed roles: agent policy, intent recognizer, success evaluator.

Each role is a contract with a scripted deterministic implementation for
offline use and a remote HTTP client. Remote chat completions are pinned to
temperature 0.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence, runtime_checkable

import requests

from .errors import ProviderError
from .trajectory import TaskSpec

UNKNOWN_INTENT = "unknown"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@runtime_checkable
class ChatProvider(Protocol):
    """Turns a role-tagged message list into a reply.

    Implementations must be deterministic (scripted fixtures by
    construction, remote providers via temperature 0) and tolerate
    concurrent calls.
    """

    def complete(self, messages: Sequence[ChatMessage]) -> str: ...


def prompt_digest(messages: Sequence[ChatMessage]) -> str:
    """Stable digest of a message list, used as the scripted-fixture key."""
    joined = "\x1e".join(f"{m.role}\x1f{m.content}" for m in messages)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


class ScriptedChatProvider:
    """Immutable fixture mapping prompt digests to canned replies."""

    def __init__(self, replies: dict[str, str], default_reply: str | None = None):
        self._replies = dict(replies)
        self._default_reply = default_reply

    @classmethod
    def from_pairs(
        cls,
        pairs: Iterable[tuple[Sequence[ChatMessage], str]],
        default_reply: str | None = None,
    ) -> ScriptedChatProvider:
        return cls(
            {prompt_digest(messages): reply for messages, reply in pairs},
            default_reply=default_reply,
        )

    @classmethod
    def from_fixture(cls, path: str | Path) -> ScriptedChatProvider:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(data["replies"], default_reply=data.get("default_reply"))

    def to_fixture(self, path: str | Path) -> None:
        data: dict = {"replies": self._replies}
        if self._default_reply is not None:
            data["default_reply"] = self._default_reply
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        digest = prompt_digest(messages)
        reply = self._replies.get(digest, self._default_reply)
        if reply is None:
            raise ProviderError(f"no scripted reply for prompt digest {digest[:12]}…")
        return reply


class CallableChatProvider:
    """Adapts a plain function into the chat contract (scripted policies)."""

    def __init__(self, fn: Callable[[Sequence[ChatMessage]], str]):
        self._fn = fn

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        return self._fn(messages)


class RemoteChatProvider:
    """Client for an OpenAI-compatible chat-completions endpoint.

    Request: ``{"model", "messages": [{"role", "content"}], "temperature": 0}``.
    Response: ``choices[0].message.content``. One retry, then ProviderError.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        token: str | None = None,
        timeout: float = 60.0,
    ):
        self._endpoint = endpoint
        self._model = model
        self._token = token
        self._timeout = timeout

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        payload = {
            "model": self._model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": 0,
        }
        headers = {}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        last_error: Exception | None = None
        for _ in range(2):
            try:
                resp = requests.post(
                    self._endpoint, json=payload, headers=headers, timeout=self._timeout
                )
                resp.raise_for_status()
                content = resp.json()["choices"][0]["message"]["content"]
                if not isinstance(content, str):
                    raise ValueError("reply content is not a string")
                return content
            except (requests.RequestException, ValueError, KeyError, IndexError, TypeError) as exc:
                last_error = exc
        raise ProviderError(f"chat endpoint failed: {last_error}") from last_error


@dataclass(frozen=True)
class IntentLabel:
    """A member of the deployment's fixed, finite intent set."""

    name: str
    description: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.name:
            raise ValueError("intent name must be non-empty")


class IntentCatalog:
    """The predefined discrete intent set; always contains 'unknown'."""

    def __init__(self, labels: Iterable[IntentLabel]):
        self._labels: list[IntentLabel] = []
        seen: set[str] = set()
        for label in labels:
            key = label.name.lower()
            if key in seen:
                raise ValueError(f"duplicate intent name: {label.name}")
            seen.add(key)
            self._labels.append(label)
        if UNKNOWN_INTENT not in seen:
            self._labels.append(
                IntentLabel(UNKNOWN_INTENT, "none of the listed intents")
            )
        self._by_name = {label.name.lower(): label for label in self._labels}

    @property
    def labels(self) -> tuple[IntentLabel, ...]:
        return tuple(self._labels)

    @property
    def unknown(self) -> IntentLabel:
        return self._by_name[UNKNOWN_INTENT]

    def get(self, name: str) -> IntentLabel | None:
        return self._by_name.get(name.lower())

    def __contains__(self, name: str) -> bool:
        return name.lower() in self._by_name

    def __len__(self) -> int:
        return len(self._labels)


class Verdict(str, Enum):
    MATCH = "match"
    NO_MATCH = "no-match"


@dataclass(frozen=True)
class Judgment:
    verdict: Verdict
    rationale: str = ""

    @property
    def is_match(self) -> bool:
        return self.verdict is Verdict.MATCH


INTENT_PROMPT_TEMPLATE = """\
You are an expert in intent recognition. Given a user question (from {count} distinct intent categories), your goal is to extract key information from the question and determine the most likely intent.

You should think step by step and conclude your answer with an intent result in the format: [INTENT], where INTENT is the name of the predicted intent category.

Below are descriptions of all {count} intent categories:
{categories}

Instructions: Your response must follow this format:
Question: This is the question.
Answer: These are your thoughts. [INTENT]

Here are some examples:
{examples}

Now, please infer user intent:
Question: {question}"""


JUDGE_PROMPT_TEMPLATE = """\
Please act as an evaluator to determine whether the model's response matches or includes the correct answer. I will provide both the correct answer and the model's response.
Please reply with either [Match] or [No Match], and briefly explain the reasoning behind your judgment.

Examples:
Question: What time is the meeting?
Correct Answer: 3:00PM
Model Response: The meeting is scheduled for 15:00.
Evaluation: [Match]

Question: What is Mike's total cost?
Correct Answer: 9
Model Response: The total cost of Mike is 9.001
Evaluation: [Match]

Question: When is he scheduled to attend the meeting?
Correct Answer: 01/12
Model Response: He will attend this meeting on the morning of January 12th.
Evaluation: [Match]

Question: What is the price?
Correct Answer: $9374
Model Response: None
Evaluation: [No Match] (Model Response is None)

Now evaluate:
Question: {question}
Correct Answer: {reference}
Model Response: {answer}"""


def render_intent_prompt(
    catalog: IntentCatalog, question: str, examples: str = ""
) -> str:
    categories = "\n".join(
        f"- {label.name}: {label.description}" if label.description else f"- {label.name}"
        for label in catalog.labels
    )
    return INTENT_PROMPT_TEMPLATE.format(
        count=len(catalog), categories=categories, examples=examples, question=question
    )


def render_judge_prompt(question: str, reference: str, answer: str) -> str:
    return JUDGE_PROMPT_TEMPLATE.format(
        question=question, reference=reference, answer=answer
    )


_BRACKET_RE = re.compile(r"\[([^\[\]]+)\]")


def parse_intent_reply(reply: str, catalog: IntentCatalog) -> IntentLabel | None:
    """Take the LAST bracketed token; None when absent or not in the catalog."""
    tokens = _BRACKET_RE.findall(reply)
    if not tokens:
        return None
    return catalog.get(tokens[-1].strip())


def infer_intent(
    provider: ChatProvider,
    catalog: IntentCatalog,
    query: str,
    *,
    examples: str = "",
) -> IntentLabel:
    """Classify a query into the intent set, falling back to 'unknown'.

    One retry on an unparseable or out-of-set reply, then the designated
    'unknown' label.
    """
    if not query.strip():
        raise ValueError("query must be non-empty")
    messages = [ChatMessage("user", render_intent_prompt(catalog, query, examples))]
    for _ in range(2):
        label = parse_intent_reply(provider.complete(messages), catalog)
        if label is not None:
            return label
    return catalog.unknown


_JUDGE_TOKEN_RE = re.compile(r"\[(no match|match)\]", re.IGNORECASE)


def judge_success(
    provider: ChatProvider, question: str, reference_answer: str, model_answer: str
) -> Judgment:
    """Binary match judgment of a model answer against the reference.

    Empty or literal-"None" model answers never match (guarded before any
    provider call); an unparseable judge reply is conservatively no-match so
    that failed trajectories cannot enter the pool.
    """
    stripped = model_answer.strip()
    if not stripped or stripped.lower() == "none":
        return Judgment(Verdict.NO_MATCH, "model response is empty or None")
    prompt = render_judge_prompt(question, reference_answer, model_answer)
    reply = provider.complete([ChatMessage("user", prompt)])
    found = _JUDGE_TOKEN_RE.search(reply)
    if found is None:
        return Judgment(Verdict.NO_MATCH, f"unparseable judge reply: {reply[:80]}")
    if found.group(1).lower() == "match":
        return Judgment(Verdict.MATCH, reply.strip())
    return Judgment(Verdict.NO_MATCH, reply.strip())


_NUMBER_RE = re.compile(r"-?\d+(?:,\d{3})*(?:\.\d+)?")
_TIME_RE = re.compile(r"\b(\d{1,2}):(\d{2})\s*(am|pm)?\b|\b(\d{1,2})\s*(am|pm)\b", re.IGNORECASE)
_MONTHS = {
    name: i + 1
    for i, name in enumerate(
        "january february march april may june july august september october november december".split()
    )
}
_MONTHS.update({name[:3]: num for name, num in _MONTHS.items()})
_DATE_NUMERIC_RE = re.compile(r"\b(\d{1,2})/(\d{1,2})\b")
_DATE_NAMED_RE = re.compile(
    r"\b(" + "|".join(sorted(_MONTHS, key=len, reverse=True)) + r")\.?\s+(\d{1,2})(?:st|nd|rd|th)?\b",
    re.IGNORECASE,
)

NUMERIC_TOLERANCE = 1e-2


def _normalize(text: str) -> str:
    return " ".join(re.sub(r"[^a-z0-9]+", " ", text.lower()).split())


def _extract_numbers(text: str) -> list[float]:
    return [float(m.group(0).replace(",", "")) for m in _NUMBER_RE.finditer(text)]


def _whole_number(text: str) -> float | None:
    cleaned = re.sub(r"[\s$€£¥%]", "", text)
    if _NUMBER_RE.fullmatch(cleaned):
        return float(cleaned.replace(",", ""))
    return None


def _numbers_close(a: float, b: float) -> bool:
    if a == b:
        return True
    return abs(a - b) <= NUMERIC_TOLERANCE * max(abs(a), abs(b))


def _extract_times(text: str) -> set[tuple[int, int]]:
    out = set()
    for m in _TIME_RE.finditer(text):
        if m.group(1) is not None:
            hour, minute, meridiem = int(m.group(1)), int(m.group(2)), m.group(3)
        else:
            hour, minute, meridiem = int(m.group(4)), 0, m.group(5)
        if meridiem:
            meridiem = meridiem.lower()
            if meridiem == "pm" and hour != 12:
                hour += 12
            elif meridiem == "am" and hour == 12:
                hour = 0
        if hour < 24 and minute < 60:
            out.add((hour, minute))
    return out


def _extract_dates(text: str) -> set[tuple[int, int]]:
    out = set()
    for m in _DATE_NUMERIC_RE.finditer(text):
        month, day = int(m.group(1)), int(m.group(2))
        if 1 <= month <= 12 and 1 <= day <= 31:
            out.add((month, day))
    for m in _DATE_NAMED_RE.finditer(text):
        month = _MONTHS[m.group(1).lower()]
        day = int(m.group(2))
        if 1 <= day <= 31:
            out.add((month, day))
    return out


def lenient_match(reference_answer: str, model_answer: str) -> Judgment:
    """Deterministic tolerant matcher, the offline stand-in for the judge.

    Match iff any of:
      - the raw strings are equal, or the normalized (lowercased,
        punctuation-stripped, whitespace-collapsed) reference appears as a
        whole-token phrase of the normalized answer;
      - the reference is wholly a number (currency symbols, commas and %
        allowed) and some number in the answer is within 1e-2 relative
        difference;
      - a clock time in the reference (H:MM or H AM/PM, 12- or 24-hour)
        denotes the same instant as one in the answer;
      - a date in the reference (MM/DD or a month name + day) denotes the
        same day as one in the answer.
    """
    if reference_answer == model_answer:
        return Judgment(Verdict.MATCH, "identical answers")
    norm_ref = _normalize(reference_answer)
    norm_ans = _normalize(model_answer)
    if norm_ref and f" {norm_ref} " in f" {norm_ans} ":
        return Judgment(Verdict.MATCH, "normalized containment")
    ref_number = _whole_number(reference_answer)
    if ref_number is not None and any(
        _numbers_close(ref_number, n) for n in _extract_numbers(model_answer)
    ):
        return Judgment(Verdict.MATCH, "numeric match within tolerance")
    if _extract_times(reference_answer) & _extract_times(model_answer):
        return Judgment(Verdict.MATCH, "same clock time")
    if _extract_dates(reference_answer) & _extract_dates(model_answer):
        return Judgment(Verdict.MATCH, "same date")
    return Judgment(Verdict.NO_MATCH, "no containment, numeric, time or date match")


class IntentRecognizer(Protocol):
    def infer(self, query: str) -> IntentLabel: ...


class ChatIntentRecognizer:
    """Intent inference through a chat provider."""

    def __init__(self, provider: ChatProvider, catalog: IntentCatalog, examples: str = ""):
        self._provider = provider
        self.catalog = catalog
        self._examples = examples

    def infer(self, query: str) -> IntentLabel:
        return infer_intent(self._provider, self.catalog, query, examples=self._examples)


class KeywordIntentRecognizer:
    """Deterministic offline recognizer: first keyword hit wins, else unknown.

    Keyword matching is case-insensitive substring search over the query, in
    the mapping's insertion order.
    """

    def __init__(self, catalog: IntentCatalog, keywords: dict[str, str]):
        self.catalog = catalog
        for intent_name in keywords.values():
            if intent_name not in catalog:
                raise ValueError(f"keyword target {intent_name!r} not in intent set")
        self._keywords = dict(keywords)

    def infer(self, query: str) -> IntentLabel:
        lowered = query.lower()
        for keyword, intent_name in self._keywords.items():
            if keyword.lower() in lowered:
                label = self.catalog.get(intent_name)
                assert label is not None
                return label
        return self.catalog.unknown


class Evaluator(Protocol):
    def evaluate(self, task: TaskSpec, answer: str | None) -> Judgment: ...


class ChatJudgeEvaluator:
    """Wraps judge_success over a task; no reference answer means no-match."""

    def __init__(self, provider: ChatProvider):
        self._provider = provider

    def evaluate(self, task: TaskSpec, answer: str | None) -> Judgment:
        if answer is None:
            return Judgment(Verdict.NO_MATCH, "no final answer produced")
        if task.reference_answer is None:
            return Judgment(Verdict.NO_MATCH, "task has no reference answer")
        return judge_success(self._provider, task.goal_text, task.reference_answer, answer)


class LenientEvaluator:
    """Offline evaluator built on lenient_match."""

    def evaluate(self, task: TaskSpec, answer: str | None) -> Judgment:
        if answer is None or not answer.strip():
            return Judgment(Verdict.NO_MATCH, "no final answer produced")
        if task.reference_answer is None:
            return Judgment(Verdict.NO_MATCH, "task has no reference answer")
        return lenient_match(task.reference_answer, answer)


class CallableEvaluator:
    """Adapts a plain function into the evaluator contract (test scripting)."""

    def __init__(self, fn: Callable[[TaskSpec, str | None], Judgment]):
        self._fn = fn

    def evaluate(self, task: TaskSpec, answer: str | None) -> Judgment:
        return self._fn(task, answer)
