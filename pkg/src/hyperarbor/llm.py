"""Chat-completion client and the restructure / validate / follow-up / restart loop.

Speaks the OpenAI-compatible ``POST {base_url}/chat/completions`` schema, so
any compatible server (hosted or local) works. Credentials come from the
environment only.
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import httpx

from .errors import (
    AuthMissing,
    ExhaustedAttempts,
    GatewayError,
    MalformedResponse,
    ParseError,
    RateLimited,
    Timeout,
    TokenBudgetExceeded,
)
from .hierarchy import INDENT, Hierarchy, parse_text, serialize_text
from .restructure import (
    RecommendationSet,
    RestructureOutcome,
    ValidationReport,
    assemble_prompt,
    structural_diff,
    validate_candidate,
)

DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-4o"
FOLLOW_UP_LINE = "The previous hierarchy failed criterion {k}: {evidence}."
FOLLOW_UP_CLOSE = "Please output the full corrected hierarchy in the same format."


@dataclass(frozen=True)
class LlmConfig:
    base_url: str = DEFAULT_BASE_URL
    model: str = DEFAULT_MODEL
    api_key_env: str = "LLM_API_KEY"
    timeout: float = 120.0
    max_follow_ups: int = 3
    max_restarts: int = 2
    temperature: float = 0.0
    max_attempts: int = 3  # HTTP attempts per request when rate limited
    backoff_base: float = 1.0  # seconds; doubled after each retry
    token_budget: int | None = 120_000  # rough prompt-size ceiling, None disables
    trust_env: bool = True  # honour proxy settings from the environment

    def __post_init__(self):
        if self.max_follow_ups < 0 or self.max_restarts < 0:
            raise ValueError("max_follow_ups and max_restarts must be >= 0")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    @classmethod
    def from_env(cls, **overrides) -> "LlmConfig":
        env = {}
        if os.environ.get("LLM_BASE_URL"):
            env["base_url"] = os.environ["LLM_BASE_URL"]
        if os.environ.get("LLM_MODEL"):
            env["model"] = os.environ["LLM_MODEL"]
        env.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**env)

    def snapshot(self) -> dict:
        """Everything but the secret itself."""
        return asdict(self)


@dataclass
class Turn:
    role: str
    content: str
    timestamp: float = 0.0
    attempts: int = 0  # HTTP attempts used to obtain an assistant turn


@dataclass
class SessionTranscript:
    """Append-only record of every message sent and received.

    ``hierarchy_blocks`` and ``explanation_blocks`` hold
    ``(turn_index, text)`` pairs pointing back into ``turns``.
    """

    turns: list[Turn] = field(default_factory=list)
    hierarchy_blocks: list[tuple[int, str]] = field(default_factory=list)
    explanation_blocks: list[tuple[int, str]] = field(default_factory=list)

    def append(self, turn: Turn) -> int:
        now = time.time()
        if self.turns and now <= self.turns[-1].timestamp:
            now = math.nextafter(self.turns[-1].timestamp, math.inf)
        turn.timestamp = now
        self.turns.append(turn)
        return len(self.turns) - 1

    def contains(self, turn: Turn) -> bool:
        return any(t is turn for t in self.turns)

    def index_of(self, turn: Turn) -> int:
        for i, t in enumerate(self.turns):
            if t is turn:
                return i
        raise ValueError("turn is not part of this transcript")

    def assistant_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.role == "assistant"]

    def to_dict(self) -> dict:
        return {
            "turns": [asdict(t) for t in self.turns],
            "hierarchy_blocks": [list(b) for b in self.hierarchy_blocks],
            "explanation_blocks": [list(b) for b in self.explanation_blocks],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SessionTranscript":
        return cls(
            turns=[Turn(**t) for t in doc["turns"]],
            hierarchy_blocks=[tuple(b) for b in doc.get("hierarchy_blocks", [])],
            explanation_blocks=[tuple(b) for b in doc.get("explanation_blocks", [])],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SessionTranscript":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- transport ----------------------------------------------------------------


def estimate_tokens(messages: list[Turn]) -> int:
    # about four characters per token for English text
    return sum(math.ceil(len(m.content) / 4) + 4 for m in messages)


def _parse_reply(resp: httpx.Response) -> str:
    try:
        doc = resp.json()
        content = doc["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"unexpected completion payload: {resp.text[:200]!r}") from exc
    if not isinstance(content, str):
        raise MalformedResponse("completion content is not a string")
    return content


def request_completion(config: LlmConfig, messages: list[Turn],
                       transcript: SessionTranscript | None = None,
                       sleep: Callable[[float], None] = time.sleep) -> Turn:
    """Send ``messages`` and return the assistant reply as a new turn.

    Request turns not yet in ``transcript`` are appended before sending and
    the reply after receiving, so a transcript shared across a session holds
    every message exactly once.
    """
    key = os.environ.get(config.api_key_env)
    if not key:
        raise AuthMissing(f"environment variable {config.api_key_env} is not set")
    if not messages:
        raise ValueError("messages must not be empty")
    if config.token_budget is not None:
        used = estimate_tokens(messages)
        if used > config.token_budget:
            raise TokenBudgetExceeded(
                f"conversation needs about {used} tokens; budget is {config.token_budget}")
    if transcript is not None:
        for m in messages:
            if not transcript.contains(m):
                transcript.append(m)

    payload = {
        "model": config.model,
        "temperature": config.temperature,
        "messages": [{"role": m.role, "content": m.content} for m in messages],
    }
    url = config.base_url.rstrip("/") + "/chat/completions"
    headers = {"Authorization": f"Bearer {key}"}
    with httpx.Client(timeout=config.timeout, trust_env=config.trust_env) as client:
        for attempt in range(1, config.max_attempts + 1):
            try:
                resp = client.post(url, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                raise Timeout(f"no reply from {url} within {config.timeout}s") from exc
            except httpx.TransportError as exc:
                raise GatewayError(f"cannot reach {url}: {exc}") from exc
            retryable = resp.status_code == 429 or resp.status_code >= 500
            if retryable and attempt < config.max_attempts:
                sleep(config.backoff_base * 2 ** (attempt - 1))
                continue
            if resp.status_code == 429:
                raise RateLimited(f"rate limited after {attempt} attempts")
            if resp.status_code in (401, 403):
                raise GatewayError(f"credentials rejected (HTTP {resp.status_code})")
            if resp.status_code >= 400:
                raise GatewayError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]!r}")
            reply = Turn("assistant", _parse_reply(resp), attempts=attempt)
            break
    if transcript is not None:
        transcript.append(reply)
    return reply


# -- reply parsing ------------------------------------------------------------


def _hierarchy_spans(lines: list[str]) -> list[tuple[int, int, int]]:
    """``(start, stop, node_count)`` of every maximal grammar-valid run."""
    spans = []
    i = 0
    while i < len(lines):
        raw = lines[i].rstrip()
        if not raw or raw[0].isspace() or raw.startswith("```"):
            i += 1
            continue
        depth = 1
        names = {raw.strip()}
        stop = i + 1
        j = i + 1
        while j < len(lines):
            line = lines[j].rstrip()
            if not line:
                j += 1
                continue
            content = line.lstrip(" ")
            spaces = len(line) - len(content)
            if content.startswith(("\t", "```")) or spaces % len(INDENT):
                break
            level = spaces // len(INDENT)
            name = content.strip()
            if level == 0 or level > depth or name in names:
                break
            names.add(name)
            depth = level + 1
            stop = j = j + 1
        spans.append((i, stop, len(names)))
        i = max(stop, i + 1)
    return spans


def extract_hierarchy(reply: str) -> str | None:
    """Longest run of lines (two or more nodes) that parses as a hierarchy."""
    lines = reply.split("\n")
    best = None
    for start, stop, count in _hierarchy_spans(lines):
        if count >= 2 and (best is None or count > best[2]):
            best = (start, stop, count)
    if best is None:
        return None
    text = "\n".join(line.rstrip() for line in lines[best[0]:best[1]]) + "\n"
    parse_text(text)  # guaranteed by the scan; kept as a cheap assertion
    return text


def explanation_text(reply: str, block: str | None) -> str:
    """Reply prose with the hierarchy block and code fences removed."""
    if block is not None:
        body = block.rstrip("\n")
        reply = reply.replace(body, "", 1)
    lines = [line for line in reply.split("\n") if not line.strip().startswith("```")]
    return "\n".join(lines).strip()


def follow_up_message(report: ValidationReport) -> str:
    lines = [FOLLOW_UP_LINE.format(k=k, evidence=ev.rstrip(".")) for k, ev in report.failures()]
    return "\n".join(lines + [FOLLOW_UP_CLOSE])


# -- session loop -------------------------------------------------------------


def restructure_session(config: LlmConfig, original: Hierarchy, recs: RecommendationSet,
                        transcript: SessionTranscript | None = None,
                        sleep: Callable[[float], None] = time.sleep) -> RestructureOutcome:
    """Prompt, validate every reply, follow up on failures, restart when stuck.

    Each conversation allows ``max_follow_ups`` follow-ups after the first
    reply; up to ``max_restarts`` fresh conversations follow. Raises
    :class:`ExhaustedAttempts` when no reply passes all four criteria.
    """
    transcript = transcript if transcript is not None else SessionTranscript()
    prompt = assemble_prompt(serialize_text(original), recs)
    report = None
    for restart in range(config.max_restarts + 1):
        convo = [Turn("user", prompt)]
        for follow_ups in range(config.max_follow_ups + 1):
            reply = request_completion(config, convo, transcript, sleep)
            convo.append(reply)
            idx = transcript.index_of(reply)
            block = extract_hierarchy(reply.content)
            prose = explanation_text(reply.content, block)
            if block is not None:
                transcript.hierarchy_blocks.append((idx, block))
            if prose:
                transcript.explanation_blocks.append((idx, prose))
            report = validate_candidate(original, block if block is not None else reply.content)
            if report.passed():
                candidate = parse_text(block if block is not None else reply.content)
                explanation = "\n\n".join(
                    text for i, text in transcript.explanation_blocks
                    if any(t is transcript.turns[i] for t in convo))
                return RestructureOutcome(
                    candidate=candidate,
                    validation=report,
                    explanation=explanation,
                    diff=structural_diff(original, candidate),
                    follow_ups=follow_ups,
                    restarts=restart,
                )
            if follow_ups < config.max_follow_ups:
                convo.append(Turn("user", follow_up_message(report)))
    n = len(transcript.assistant_turns())
    raise ExhaustedAttempts(
        f"no valid hierarchy after {n} replies "
        f"({config.max_restarts + 1} conversations)", transcript, report)


__all__ = [
    "LlmConfig",
    "Turn",
    "SessionTranscript",
    "request_completion",
    "extract_hierarchy",
    "explanation_text",
    "follow_up_message",
    "restructure_session",
    "ParseError",
]
