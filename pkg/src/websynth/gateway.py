"""Provider-agnostic completion surface shared by every model role.

Two backends sit behind the same call: an HTTP client for chat-completion
style endpoints and a scripted mock that replays canned responses. Every call
goes through ``Gateway.complete`` so retries, rate limits and the call log are
uniform across roles.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import httpx

from .errors import GatewayError, ScriptExhausted, ToolParseError, TransportError
from .tokens import count_tokens

logger = logging.getLogger(__name__)

Message = Mapping[str, str]

DEFAULT_FIELD_MAP = {
    "model": "model",
    "messages": "messages",
    "temperature": "temperature",
    "max_tokens": "max_tokens",
    "tools": "tools",
    "response_text": "choices.0.message.content",
    "response_tool_calls": "choices.0.message.tool_calls",
    "usage_prompt": "usage.prompt_tokens",
    "usage_completion": "usage.completion_tokens",
}


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 0.5


@dataclass(frozen=True)
class RateLimit:
    max_in_flight: int = 4
    min_interval: float = 0.0


@dataclass(frozen=True)
class RoleConfig:
    role: str
    backend: str = "mock"  # "mock" or "http"
    script: str | None = None
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str | None = None
    temperature: float = 0.0
    max_tokens: int = 2048
    timeout: float = 120.0
    retry: RetryPolicy = RetryPolicy()
    rate: RateLimit = RateLimit()
    field_map: Mapping[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, role: str, d: Mapping[str, Any]) -> "RoleConfig":
        d = dict(d)
        retry = RetryPolicy(**d.pop("retry", {}))
        rate = RateLimit(**d.pop("rate", {}))
        d.pop("role", None)
        return cls(role=role, retry=retry, rate=rate, **d)


@dataclass
class Completion:
    text: str
    tool_call: dict | None = None
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass
class CallRecord:
    role: str
    latency_ms: float
    prompt_tokens: int
    completion_tokens: int
    retries: int
    ok: bool
    error: str | None = None


def _messages_text(messages: Sequence[Message]) -> str:
    return "\n".join(m.get("content", "") for m in messages)


def _parse_tool_call(raw: Any) -> dict:
    """Normalize a tool call into {"name", "arguments"} with dict arguments."""
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ToolParseError(f"tool call is not JSON: {raw[:80]!r}") from exc
    if not isinstance(raw, dict):
        raise ToolParseError(f"tool call has unexpected shape: {raw!r}")
    if "function" in raw:  # OpenAI-style {"type": "function", "function": {...}}
        raw = raw["function"]
    name = raw.get("name")
    args = raw.get("arguments", {})
    if isinstance(args, str):
        try:
            args = json.loads(args) if args.strip() else {}
        except json.JSONDecodeError as exc:
            raise ToolParseError(f"tool arguments are not JSON: {args[:80]!r}") from exc
    if not isinstance(name, str) or not isinstance(args, dict):
        raise ToolParseError(f"tool call has unexpected shape: {raw!r}")
    return {"name": name, "arguments": args}


class MockBackend:
    """Replays scripted responses.

    A script is an ordered list of ``{role, match, response, sticky}`` records.
    A call for ``role`` takes the first unconsumed record of that role whose
    match keys (one string or a list; all must be present) occur in the
    prompt; a record without match keys matches any prompt. Sticky records
    are never consumed. ``response`` is either text, an object with ``text``
    and ``tool_call``, or ``{"raise": "transport"}`` to simulate a failure.
    """

    def __init__(self, records: Sequence[Mapping[str, Any]]):
        self._records = [dict(r) for r in records]
        self._used = [False] * len(self._records)
        self._by_role: dict[str, list[int]] = {}
        for i, rec in enumerate(self._records):
            self._by_role.setdefault(rec["role"], []).append(i)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        records = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                records.append(json.loads(line))
        return cls(records)

    def _select(self, role: str, prompt: str) -> dict:
        with self._lock:
            for i in self._by_role.get(role, ()):
                if self._used[i]:
                    continue
                rec = self._records[i]
                keys = rec.get("match")
                if isinstance(keys, str):
                    keys = [keys]
                if keys and not all(k in prompt for k in keys):
                    continue
                if not rec.get("sticky"):
                    self._used[i] = True
                return rec
        raise ScriptExhausted(f"no scripted response left for role {role!r}")

    def complete(self, config: RoleConfig, messages: Sequence[Message], tools: Sequence[dict] | None) -> Completion:
        prompt = _messages_text(messages)
        rec = self._select(config.role, prompt)
        resp = rec.get("response", "")
        tool_call = None
        if isinstance(resp, dict):
            if resp.get("raise") == "transport":
                raise TransportError("scripted transport failure")
            text = resp.get("text", "")
            if resp.get("tool_call") is not None:
                tool_call = _parse_tool_call(resp["tool_call"])
        else:
            text = str(resp)
        return Completion(
            text=text,
            tool_call=tool_call,
            prompt_tokens=count_tokens(prompt),
            completion_tokens=count_tokens(text),
        )


def _dig(obj: Any, path: str) -> Any:
    for part in path.split("."):
        if obj is None:
            return None
        if isinstance(obj, list):
            try:
                obj = obj[int(part)]
            except (ValueError, IndexError):
                return None
        elif isinstance(obj, dict):
            obj = obj.get(part)
        else:
            return None
    return obj


class HttpBackend:
    """POSTs one chat-completion request per call; field names come from the field map."""

    def __init__(self, client: httpx.Client | None = None):
        self._client = client or httpx.Client()

    def complete(self, config: RoleConfig, messages: Sequence[Message], tools: Sequence[dict] | None) -> Completion:
        if not config.endpoint:
            raise GatewayError(f"role {config.role!r} has no endpoint configured")
        fmap = {**DEFAULT_FIELD_MAP, **config.field_map}
        body: dict[str, Any] = {
            fmap["messages"]: [dict(m) for m in messages],
            fmap["temperature"]: config.temperature,
            fmap["max_tokens"]: config.max_tokens,
        }
        if config.model:
            body[fmap["model"]] = config.model
        if tools:
            body[fmap["tools"]] = [{"type": "function", "function": t} for t in tools]
        headers = {}
        if config.api_key_env:
            key = os.environ.get(config.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._client.post(config.endpoint, json=body, headers=headers, timeout=config.timeout)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransportError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise TransportError("response body is not JSON") from exc
        text = _dig(payload, fmap["response_text"]) or ""
        tool_call = None
        calls = _dig(payload, fmap["response_tool_calls"])
        if calls:
            tool_call = _parse_tool_call(calls[0] if isinstance(calls, list) else calls)
        elif tools and not text:
            raise ToolParseError("tool call requested but reply carries neither text nor a call")
        return Completion(
            text=str(text),
            tool_call=tool_call,
            prompt_tokens=int(_dig(payload, fmap["usage_prompt"]) or 0),
            completion_tokens=int(_dig(payload, fmap["usage_completion"]) or 0),
        )


class _Throttle:
    def __init__(self, rate: RateLimit):
        self._sem = threading.BoundedSemaphore(max(1, rate.max_in_flight))
        self._interval = rate.min_interval
        self._lock = threading.Lock()
        self._last = 0.0

    def __enter__(self) -> None:
        self._sem.acquire()
        if self._interval > 0:
            with self._lock:
                wait = self._last + self._interval - time.monotonic()
                if wait > 0:
                    time.sleep(wait)
                self._last = time.monotonic()

    def __exit__(self, *exc: object) -> None:
        self._sem.release()


class Gateway:
    """Resolves roles to configs and backends, and logs every call.

    Roles missing from ``roles`` fall back to the ``"default"`` entry.
    """

    def __init__(
        self,
        roles: Mapping[str, RoleConfig],
        *,
        backends: Mapping[str, Any] | None = None,
        replay_log: str | Path | None = None,
        sleep: Callable[[float], None] = time.sleep,
        base_dir: str | Path | None = None,
    ):
        self.roles = dict(roles)
        self.calls: list[CallRecord] = []
        self._backends: dict[str, Any] = dict(backends or {})
        self._throttles: dict[str, _Throttle] = {}
        self._replay_path = Path(replay_log) if replay_log else None
        self._sleep = sleep
        self._base_dir = Path(base_dir) if base_dir else None
        self._lock = threading.Lock()

    def config_for(self, role: str) -> RoleConfig:
        cfg = self.roles.get(role) or self.roles.get("default")
        if cfg is None:
            raise GatewayError(f"no configuration for role {role!r}")
        if cfg.role != role:
            cfg = replace(cfg, role=role)
        return cfg

    def _backend(self, cfg: RoleConfig) -> Any:
        key = f"mock:{cfg.script}" if cfg.backend == "mock" else "http"
        with self._lock:
            if key not in self._backends:
                if cfg.backend == "mock":
                    if not cfg.script:
                        raise GatewayError(f"mock role {cfg.role!r} has no script")
                    path = Path(cfg.script)
                    if self._base_dir and not path.is_absolute():
                        path = self._base_dir / path
                    self._backends[key] = MockBackend.from_file(path)
                elif cfg.backend == "http":
                    self._backends[key] = HttpBackend()
                else:
                    raise GatewayError(f"unknown backend {cfg.backend!r}")
            return self._backends[key]

    def _throttle(self, cfg: RoleConfig) -> _Throttle:
        with self._lock:
            if cfg.role not in self._throttles:
                self._throttles[cfg.role] = _Throttle(cfg.rate)
            return self._throttles[cfg.role]

    def handle(self, role: str) -> "RoleHandle":
        return RoleHandle(self, role)

    def complete(self, role: str, messages: Sequence[Message], tools: Sequence[dict] | None = None) -> Completion:
        if not messages:
            raise ValueError("messages must be non-empty")
        cfg = self.config_for(role)
        backend = self._backend(cfg)
        attempts = max(1, cfg.retry.attempts)
        retries = 0
        start = time.perf_counter()
        with self._throttle(cfg):
            while True:
                try:
                    result = backend.complete(cfg, messages, tools)
                    break
                except TransportError as exc:
                    if retries + 1 >= attempts:
                        self._log(CallRecord(role, _ms(start), 0, 0, retries, False, str(exc)))
                        raise
                    retries += 1
                    logger.warning("role %s: transport failure (%s), retry %d", role, exc, retries)
                    self._sleep(cfg.retry.backoff * 2 ** (retries - 1))
                except GatewayError as exc:
                    self._log(CallRecord(role, _ms(start), 0, 0, retries, False, str(exc)))
                    raise
        self._log(CallRecord(role, _ms(start), result.prompt_tokens, result.completion_tokens, retries, True))
        self._record_replay(role, messages, result)
        return result

    def _log(self, rec: CallRecord) -> None:
        with self._lock:
            self.calls.append(rec)

    def _record_replay(self, role: str, messages: Sequence[Message], result: Completion) -> None:
        if self._replay_path is None:
            return
        response: Any = result.text
        if result.tool_call is not None:
            response = {"text": result.text, "tool_call": result.tool_call}
        line = json.dumps(
            {"role": role, "match": [messages[-1].get("content", "")], "response": response},
            ensure_ascii=False,
        )
        with self._lock:
            with self._replay_path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def calls_by_role(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for rec in self.calls:
            counts[rec.role] = counts.get(rec.role, 0) + 1
        return counts


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


@dataclass(frozen=True)
class RoleHandle:
    """A gateway bound to one role; this is what pipeline stages receive."""

    gateway: Gateway
    role: str

    def complete(self, messages: Sequence[Message], tools: Sequence[dict] | None = None) -> Completion:
        return self.gateway.complete(self.role, messages, tools)

    def ask(self, prompt: str, system: str | None = None) -> str:
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": prompt})
        return self.complete(messages).text


def mock_gateway(records: Sequence[Mapping[str, Any]], roles: Sequence[str] = ()) -> Gateway:
    """Gateway whose every role replays the given in-memory script."""
    backend = MockBackend(records)
    cfgs = {"default": RoleConfig(role="default", backend="mock", script="<memory>", retry=RetryPolicy(backoff=0))}
    for r in roles:
        cfgs[r] = RoleConfig(role=r, backend="mock", script="<memory>", retry=RetryPolicy(backoff=0))
    return Gateway(cfgs, backends={"mock:<memory>": backend}, sleep=lambda s: None)
