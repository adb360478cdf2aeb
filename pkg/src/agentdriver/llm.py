"""Chat protocol layer: message types, transcripts, and backends.

Three interchangeable backends drive every LLM call in the pipeline:

* scripted — pattern table of canned replies, for tests and offline runs;
* replay   — re-issues a recorded exchange log, failing loudly on any
  divergence of the request from the recording;
* http     — a chat-completions wire client (messages array, functions
  export, function_call replies; see docs/wire_format.md) with retries and
  an in-flight cap.

A recording wrapper captures every exchange (including failures) so any
run can later be replayed bit-exactly.
"""

from __future__ import annotations

import difflib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from fnmatch import fnmatch
from pathlib import Path

import httpx

from .errors import (
    BackendUnavailable,
    ParseError,
    ReplayDivergence,
    ResponseMalformed,
    ScriptExhausted,
    ValidationError,
)
from .tools import ToolCall

ROLES = ("system", "user", "assistant", "tool")


@dataclass(frozen=True)
class ChatTurn:
    role: str
    content: str | None = None
    tool_call: ToolCall | None = None
    tool_name: str | None = None
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValidationError("role", f"must be one of {ROLES}")
        if self.tool_call is not None and self.role != "assistant":
            raise ValidationError("tool_call", "only assistant turns may carry a tool call")
        if self.role == "tool" and not self.tool_name:
            raise ValidationError("tool_name", "tool turns must name their tool")


def turn_to_dict(turn: ChatTurn) -> dict:
    doc: dict = {"role": turn.role, "content": turn.content}
    if turn.tool_call is not None:
        doc["tool_call"] = {"name": turn.tool_call.name, "arguments": turn.tool_call.arguments}
    if turn.tool_name is not None:
        doc["tool_name"] = turn.tool_name
    return doc


def turn_from_dict(doc: dict) -> ChatTurn:
    tool_call = None
    if doc.get("tool_call"):
        tool_call = ToolCall(doc["tool_call"]["name"], doc["tool_call"].get("arguments", {}))
    return ChatTurn(
        role=doc["role"],
        content=doc.get("content"),
        tool_call=tool_call,
        tool_name=doc.get("tool_name"),
    )


class Transcript:
    """Append-only record of the conversation plus per-turn metadata."""

    def __init__(self) -> None:
        self.turns: list[ChatTurn] = []
        self.meta: list[dict] = []

    def append(self, turn: ChatTurn, **meta) -> None:
        if turn.role == "tool":
            prev = self.turns[-1] if self.turns else None
            if prev is None or prev.role != "assistant" or prev.tool_call is None:
                raise ValidationError("transcript", "tool turns must follow an assistant tool call")
        merged = dict(turn.meta)
        merged.update(meta)
        self.turns.append(turn)
        self.meta.append(merged)

    def __len__(self) -> int:
        return len(self.turns)

    def to_jsonl(self) -> str:
        lines = [
            json.dumps({"turn": turn_to_dict(t), "meta": m}, sort_keys=True)
            for t, m in zip(self.turns, self.meta)
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        transcript = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            transcript.turns.append(turn_from_dict(doc["turn"]))
            transcript.meta.append(doc.get("meta", {}))
        return transcript


@dataclass
class BackendConfig:
    kind: str = "scripted"  # scripted | replay | http
    endpoint: str = ""
    model: str = "gpt-3.5-turbo-0613"
    temperature: float = 0.0
    max_in_flight: int = 4
    retry_attempts: int = 3
    backoff_start: float = 1.0
    backoff_multiplier: float = 2.0
    timeout: float = 30.0
    script: list = field(default_factory=list)  # (pattern, reply) pairs
    transcript_path: str | None = None  # replay source
    replay_exchanges: list | None = None  # inline replay source
    record: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("scripted", "replay", "http"):
            raise ValidationError("llm.kind", "must be scripted, replay, or http")
        if self.temperature < 0:
            raise ValidationError("llm.temperature", "must be >= 0")
        if self.max_in_flight < 1:
            raise ValidationError("llm.max_in_flight", "must be >= 1")


def request_payload(messages: list[ChatTurn], tools: list[dict] | None) -> dict:
    """Canonical request form used for recording and divergence checks."""
    return {"messages": [turn_to_dict(m) for m in messages], "tools": tools}


def _latest_content(messages: list[ChatTurn]) -> str:
    for turn in reversed(messages):
        if turn.content:
            return turn.content
    return ""


class ScriptedBackend:
    """Deterministic mock: first pattern matching the latest message wins.

    A reply may be a string (assistant text, repeatable), a dict with a
    ``tool_call`` entry, or a list of either (consumed one per match;
    exhaustion raises ScriptExhausted).
    """

    def __init__(self, table: list):
        self.table = [(pattern, reply) for pattern, reply in table]
        self._cursor: dict[int, int] = {}
        self._lock = threading.Lock()

    def complete(self, messages: list[ChatTurn], tools: list[dict] | None = None) -> ChatTurn:
        if not messages or messages[0].role != "system":
            raise ValidationError("messages", "must be non-empty and start with a system turn")
        content = _latest_content(messages)
        with self._lock:
            for idx, (pattern, reply) in enumerate(self.table):
                if not fnmatch(content, pattern):
                    continue
                if isinstance(reply, list):
                    pos = self._cursor.get(idx, 0)
                    if pos >= len(reply):
                        raise ScriptExhausted(
                            f"script entry {idx} ({pattern!r}) exhausted after {len(reply)} replies"
                        )
                    self._cursor[idx] = pos + 1
                    return _reply_to_turn(reply[pos])
                return _reply_to_turn(reply)
        raise ScriptExhausted(f"no scripted reply matches {content[:80]!r}")


def _reply_to_turn(reply) -> ChatTurn:
    if isinstance(reply, str):
        return ChatTurn(role="assistant", content=reply)
    if isinstance(reply, dict):
        tool_call = None
        if reply.get("tool_call"):
            tool_call = ToolCall(reply["tool_call"]["name"], reply["tool_call"].get("arguments", {}))
        return ChatTurn(role="assistant", content=reply.get("content"), tool_call=tool_call)
    raise ValidationError("script", f"unsupported reply type {type(reply).__name__}")


_ERROR_TYPES = {
    "BackendUnavailable": BackendUnavailable,
    "ResponseMalformed": ResponseMalformed,
    "ScriptExhausted": ScriptExhausted,
}


class ReplayBackend:
    """Replays a recorded exchange log; requests must match bit for bit."""

    def __init__(self, exchanges: list[dict]):
        self.exchanges = exchanges
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayBackend":
        exchanges = []
        for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
            if not line.strip():
                continue
            try:
                exchanges.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{i + 1}: not valid JSON: {exc}") from exc
        return cls(exchanges)

    def complete(self, messages: list[ChatTurn], tools: list[dict] | None = None) -> ChatTurn:
        request = request_payload(messages, tools)
        with self._lock:
            if self._cursor >= len(self.exchanges):
                raise ScriptExhausted(f"replay log exhausted after {len(self.exchanges)} exchanges")
            recorded = self.exchanges[self._cursor]
            self._cursor += 1
        if recorded.get("request") != request:
            want = json.dumps(recorded.get("request"), indent=2, sort_keys=True).splitlines()
            got = json.dumps(request, indent=2, sort_keys=True).splitlines()
            diff = "\n".join(difflib.unified_diff(want, got, "recorded", "replayed", lineterm=""))
            raise ReplayDivergence(f"request diverges from recording:\n{diff}")
        if "error" in recorded:
            err = recorded["error"]
            raise _ERROR_TYPES.get(err.get("type"), BackendUnavailable)(err.get("message", "recorded error"))
        return turn_from_dict(recorded["response"])


class RecordingBackend:
    """Wraps any backend and persists every exchange, including failures."""

    def __init__(self, inner, path: str | Path | None = None):
        self.inner = inner
        self.path = Path(path) if path is not None else None
        self.exchanges: list[dict] = []
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.write_text("", encoding="utf-8")

    def _record(self, entry: dict) -> None:
        with self._lock:
            self.exchanges.append(entry)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def complete(self, messages: list[ChatTurn], tools: list[dict] | None = None) -> ChatTurn:
        request = request_payload(messages, tools)
        try:
            turn = self.inner.complete(messages, tools)
        except Exception as exc:
            self._record(
                {"request": request, "error": {"type": type(exc).__name__, "message": str(exc)}}
            )
            raise
        self._record({"request": request, "response": turn_to_dict(turn)})
        return turn


ENDPOINT_ENV = "AGENTDRIVER_LLM_ENDPOINT"
API_KEY_ENV = "AGENTDRIVER_LLM_API_KEY"
AUTH_HEADER_ENV = "AGENTDRIVER_LLM_AUTH_HEADER"

_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


def wire_message(turn: ChatTurn) -> dict:
    """Map a ChatTurn onto the chat-completions message schema."""
    if turn.role == "tool":
        return {"role": "function", "name": turn.tool_name, "content": turn.content or ""}
    msg: dict = {"role": turn.role, "content": turn.content}
    if turn.tool_call is not None:
        msg["function_call"] = {
            "name": turn.tool_call.name,
            "arguments": json.dumps(turn.tool_call.arguments),
        }
    return msg


class HttpBackend:
    """Chat-completions client with retry/backoff and an in-flight cap."""

    def __init__(self, config: BackendConfig, sleep=time.sleep):
        self.config = config
        self.endpoint = config.endpoint or os.environ.get(ENDPOINT_ENV, "")
        if not self.endpoint:
            raise BackendUnavailable(f"no endpoint configured (set {ENDPOINT_ENV} or llm.endpoint)")
        self._sleep = sleep
        self._semaphore = threading.Semaphore(config.max_in_flight)
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV, "")
        if api_key:
            headers[os.environ.get(AUTH_HEADER_ENV, "Authorization")] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=config.timeout, headers=headers)

    def close(self) -> None:
        self._client.close()

    def complete(self, messages: list[ChatTurn], tools: list[dict] | None = None) -> ChatTurn:
        if not messages or messages[0].role != "system":
            raise ValidationError("messages", "must be non-empty and start with a system turn")
        body: dict = {
            "model": self.config.model,
            "messages": [wire_message(m) for m in messages],
            "temperature": self.config.temperature,
        }
        if tools:
            body["functions"] = tools
        backoff = self.config.backoff_start
        last_error = "no attempts made"
        for attempt in range(self.config.retry_attempts):
            if attempt > 0:
                self._sleep(backoff)
                backoff *= self.config.backoff_multiplier
            started = time.monotonic()
            try:
                with self._semaphore:
                    response = self._client.post(self.endpoint, json=body)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code in _RETRYABLE_STATUS:
                last_error = f"status {response.status_code}"
                continue
            if response.status_code != 200:
                raise BackendUnavailable(f"endpoint returned status {response.status_code}")
            return self._parse(response, time.monotonic() - started)
        raise BackendUnavailable(
            f"giving up after {self.config.retry_attempts} attempts ({last_error})"
        )

    def _parse(self, response: httpx.Response, latency: float) -> ChatTurn:
        try:
            payload = response.json()
        except (json.JSONDecodeError, ValueError) as exc:
            raise ResponseMalformed(f"response body is not JSON: {exc}") from exc
        try:
            message = payload["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ResponseMalformed(f"response missing choices[0].message: {exc}") from exc
        tool_call = None
        if isinstance(message.get("function_call"), dict):
            fc = message["function_call"]
            name = fc.get("name")
            if not isinstance(name, str):
                raise ResponseMalformed("function_call without a name")
            raw_args = fc.get("arguments", "{}")
            try:
                arguments = json.loads(raw_args) if isinstance(raw_args, str) else dict(raw_args)
                if not isinstance(arguments, dict):
                    arguments = {"_raw": raw_args}
            except json.JSONDecodeError:
                # lenient: bad argument JSON becomes an ArgumentError observation
                # downstream instead of killing the scene
                arguments = {"_raw": raw_args}
            tool_call = ToolCall(name, arguments)
        meta = {"latency_s": latency}
        usage = payload.get("usage")
        if isinstance(usage, dict):
            meta["usage"] = usage
        return ChatTurn(
            role="assistant",
            content=message.get("content"),
            tool_call=tool_call,
            meta=meta,
        )


def make_backend(config: BackendConfig):
    """Instantiate the backend described by the config."""
    if config.kind == "scripted":
        return ScriptedBackend(config.script)
    if config.kind == "replay":
        if config.replay_exchanges is not None:
            return ReplayBackend(config.replay_exchanges)
        if not config.transcript_path:
            raise ValidationError("llm.transcript_path", "replay backend needs a transcript")
        return ReplayBackend.from_file(config.transcript_path)
    return HttpBackend(config)
