"""Chat-completion backends and output sanitization.

Three backend kinds share one ``complete`` surface:

* ``http``: an OpenAI-compatible ``/chat/completions`` endpoint.
* ``scripted``: queued responses from a JSONL file or list, optionally
  keyed by ``(discourse_id, turn)``.
* ``replay``: recorded responses looked up by ``(discourse_id, turn)``.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import httpx

from .core import GenerationParams

log = logging.getLogger(__name__)

Key = tuple[str, str]


# --- errors -----------------------------------------------------------------


class ProviderError(Exception):
    """Base class; ``kind`` is the short tag persisted in discourse/verdict records."""

    kind = "ProviderError"
    retryable = False

    def __init__(self, message: str, context: Mapping[str, Any] | None = None):
        self.context = dict(context or {})
        super().__init__(message)


class ProviderTimeout(ProviderError):
    kind = "Timeout"
    retryable = True


class HttpStatus(ProviderError):
    kind = "HttpStatus"

    def __init__(self, code: int, message: str = "", context=None):
        self.code = code
        super().__init__(f"HTTP {code}: {message}".rstrip(": "), context)

    @property
    def retryable(self) -> bool:  # type: ignore[override]
        return self.code >= 500


class ConnectionFailed(ProviderError):
    kind = "ConnectionFailed"


class MalformedResponseBody(ProviderError):
    kind = "MalformedResponseBody"


class ExhaustedScript(ProviderError):
    kind = "ExhaustedScript"


class MissingReplayEntry(ProviderError):
    kind = "MissingReplayEntry"


class ProviderConfigError(ValueError):
    pass


# --- configuration ----------------------------------------------------------

KINDS = ("http", "scripted", "replay")


@dataclass(frozen=True)
class ProviderConfig:
    id: str
    kind: str
    endpoint: str | None = None
    model_name: str | None = None
    generation: GenerationParams = field(default_factory=GenerationParams)
    timeout: float = 30.0
    max_retries: int = 2
    backoff_base: float = 1.0
    api_key_env: str | None = None
    requests_per_minute: float | None = None
    script: str | None = None
    responses: tuple[Any, ...] | None = None
    transcript: str | None = None
    history: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProviderConfigError(f"provider {self.id}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "http" and not (self.endpoint and self.model_name):
            raise ProviderConfigError(f"provider {self.id}: http kind needs endpoint and model")
        if self.kind == "scripted" and self.script is None and self.responses is None:
            raise ProviderConfigError(f"provider {self.id}: scripted kind needs script or responses")
        if self.kind == "replay" and self.transcript is None:
            raise ProviderConfigError(f"provider {self.id}: replay kind needs a transcript")
        if self.max_retries < 0:
            raise ProviderConfigError(f"provider {self.id}: max_retries must be >= 0")

    def describe(self) -> dict[str, Any]:
        """Secret-free summary, used for config hashing and manifests."""
        d = {"id": self.id, "kind": self.kind, "generation": self.generation.to_dict()}
        if self.kind == "http":
            d.update(endpoint=self.endpoint, model=self.model_name, api_key_env=self.api_key_env)
        elif self.kind == "scripted":
            d["script"] = self.script
        else:
            d["transcript"] = self.transcript
        return d

    @classmethod
    def from_mapping(cls, pid: str, d: Mapping[str, Any], base_dir: Path | None = None,
                     default_generation: GenerationParams | None = None) -> "ProviderConfig":
        known = {"kind", "endpoint", "model", "model_name", "temperature", "max_tokens", "seed",
                 "timeout", "max_retries", "backoff_base", "api_key_env", "requests_per_minute",
                 "script", "responses", "transcript", "history"}
        unknown = set(d) - known
        if unknown:
            raise ProviderConfigError(f"provider {pid}: unknown keys {sorted(unknown)}")
        if "api_key" in d:
            raise ProviderConfigError(f"provider {pid}: put secrets in an environment variable (api_key_env)")
        gen = default_generation or GenerationParams()
        try:
            gen = GenerationParams(
                temperature=float(d.get("temperature", gen.temperature)),
                max_tokens=int(d.get("max_tokens", gen.max_tokens)),
                seed=d.get("seed", gen.seed),
            )
        except ValueError as e:
            raise ProviderConfigError(f"provider {pid}: {e}") from None

        def resolve(p):
            if p is None:
                return None
            path = Path(p)
            return str(path if path.is_absolute() or base_dir is None else base_dir / path)

        responses = d.get("responses")
        return cls(
            id=pid,
            kind=d.get("kind", ""),
            endpoint=d.get("endpoint"),
            model_name=d.get("model", d.get("model_name")),
            generation=gen,
            timeout=float(d.get("timeout", 30.0)),
            max_retries=int(d.get("max_retries", 2)),
            backoff_base=float(d.get("backoff_base", 1.0)),
            api_key_env=d.get("api_key_env"),
            requests_per_minute=d.get("requests_per_minute"),
            script=resolve(d.get("script")),
            responses=tuple(responses) if responses is not None else None,
            transcript=resolve(d.get("transcript")),
            history=bool(d.get("history", False)),
        )


# --- rate limiting ----------------------------------------------------------


class TokenBucket:
    """Blocking token bucket; ``rate_per_minute`` tokens refill continuously."""

    def __init__(self, rate_per_minute: float, capacity: float | None = None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if rate_per_minute <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate_per_minute / 60.0
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_minute / 60.0)
        self.tokens = self.capacity
        self.clock = clock
        self.sleep = sleep
        self.updated = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            self.sleep(wait)


# --- backends ---------------------------------------------------------------


def _read_jsonl(path: str) -> list[dict[str, Any]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if isinstance(obj, str):
                obj = {"response": obj}
            if not isinstance(obj, dict) or not isinstance(obj.get("response"), str):
                raise ProviderConfigError(f"{path}:{n}: each line needs a string 'response'")
            rows.append(obj)
    return rows


def _entry_key(obj: Mapping[str, Any]) -> Key | None:
    if "discourse_id" in obj and "turn" in obj:
        return (str(obj["discourse_id"]), str(obj["turn"]))
    return None


class Provider:
    def __init__(self, config: ProviderConfig):
        self.config = config

    @property
    def id(self) -> str:
        return self.config.id

    @property
    def order_sensitive(self) -> bool:
        """True when results depend on call order (unkeyed scripted queue)."""
        return False

    def complete(self, system: str, user: str, *, params: GenerationParams | None = None,
                 key: Key | None = None, history: Sequence[Mapping[str, str]] = ()) -> str:
        raise NotImplementedError

    def close(self) -> None:
        pass


class ScriptedProvider(Provider):
    def __init__(self, config: ProviderConfig):
        super().__init__(config)
        rows = _read_jsonl(config.script) if config.script else [
            r if isinstance(r, dict) else {"response": r} for r in (config.responses or ())
        ]
        self._keyed: dict[Key, deque[str]] = {}
        self._queue: deque[str] = deque()
        for r in rows:
            k = _entry_key(r)
            if k is None:
                self._queue.append(r["response"])
            else:
                self._keyed.setdefault(k, deque()).append(r["response"])
        self._lock = threading.Lock()
        self.calls: list[dict[str, Any]] = []

    @property
    def order_sensitive(self) -> bool:
        return bool(self._queue)

    def complete(self, system, user, *, params=None, key=None, history=()):
        if not system or not user:
            raise ValueError("prompts must be non-empty")
        with self._lock:
            self.calls.append({"system": system, "user": user, "key": key})
            if key is not None and self._keyed.get(key):
                return self._keyed[key].popleft()
            if self._queue:
                return self._queue.popleft()
        raise ExhaustedScript(f"provider {self.id}: script exhausted", {"key": key})


class ReplayProvider(Provider):
    def __init__(self, config: ProviderConfig):
        super().__init__(config)
        self._entries: dict[Key, str] = {}
        for r in _read_jsonl(config.transcript):
            k = _entry_key(r)
            if k is None:
                raise ProviderConfigError(f"{config.transcript}: replay entries need discourse_id and turn")
            self._entries[k] = r["response"]

    def complete(self, system, user, *, params=None, key=None, history=()):
        if not system or not user:
            raise ValueError("prompts must be non-empty")
        if key is None or key not in self._entries:
            raise MissingReplayEntry(f"provider {self.id}: no recorded response for {key}", {"key": key})
        return self._entries[key]


class HttpProvider(Provider):
    def __init__(self, config: ProviderConfig, *, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        super().__init__(config)
        self.url = config.endpoint.rstrip("/") + "/chat/completions"
        self.sleep = sleep
        self._client = httpx.Client(timeout=config.timeout, transport=transport)
        self._bucket = TokenBucket(config.requests_per_minute) if config.requests_per_minute else None

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            token = os.environ.get(self.config.api_key_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
            else:
                log.warning("provider %s: environment variable %s is not set", self.id, self.config.api_key_env)
        return headers

    def request_body(self, system: str, user: str, params: GenerationParams,
                     history: Sequence[Mapping[str, str]] = ()) -> dict[str, Any]:
        messages = [{"role": "system", "content": system}]
        messages.extend({"role": m["role"], "content": m["content"]} for m in history)
        messages.append({"role": "user", "content": user})
        body: dict[str, Any] = {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.seed is not None:
            body["seed"] = params.seed
        return body

    def _once(self, body: dict[str, Any], ctx: dict[str, Any]) -> str:
        try:
            resp = self._client.post(self.url, json=body, headers=self._headers())
        except httpx.TimeoutException as e:
            raise ProviderTimeout(f"provider {self.id}: timed out ({e.__class__.__name__})", ctx) from None
        except httpx.TransportError as e:
            raise ConnectionFailed(f"provider {self.id}: {e.__class__.__name__}: {e}", ctx) from None
        if resp.status_code >= 400:
            raise HttpStatus(resp.status_code, resp.text[:200], ctx)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise MalformedResponseBody(f"provider {self.id}: unexpected body {resp.text[:200]!r}", ctx) from None

    def complete(self, system, user, *, params=None, key=None, history=()):
        if not system or not user:
            raise ValueError("prompts must be non-empty")
        params = params or self.config.generation
        body = self.request_body(system, user, params, history if self.config.history else ())
        ctx = {"provider": self.id, "url": self.url, "key": key}
        attempt = 0
        while True:
            if self._bucket:
                self._bucket.acquire()
            try:
                content = self._once(body, ctx)
            except ProviderError as e:
                if not e.retryable or attempt >= self.config.max_retries:
                    e.context["attempts"] = attempt + 1
                    raise
                delay = self.config.backoff_base * 2 ** attempt
                log.info("provider %s: %s; retrying in %.1fs", self.id, e, delay)
                self.sleep(delay)
                attempt += 1
                continue
            if not isinstance(content, str):
                raise MalformedResponseBody(f"provider {self.id}: message content is not text", ctx)
            return content

    def close(self) -> None:
        self._client.close()


def make_provider(config: ProviderConfig, **kwargs) -> Provider:
    if config.kind == "http":
        return HttpProvider(config, **kwargs)
    if config.kind == "scripted":
        return ScriptedProvider(config)
    return ReplayProvider(config)


def complete(provider: Provider, system: str, user: str, **kwargs) -> str:
    return provider.complete(system, user, **kwargs)


# --- sanitization -----------------------------------------------------------

# a tag needs a letter right after "<", so "a < b" and "x<3" stay intact
_TAG_NAME = r"[A-Za-z][A-Za-z0-9_:-]*"
_TAG_PAIR = re.compile(rf"<({_TAG_NAME})(?:\s[^<>]*)?>.*?</\1\s*>", re.DOTALL)
_TAG_MARK = re.compile(rf"</?{_TAG_NAME}(?:\s[^<>]*)?/?>")
_HSPACE = re.compile(r"[ \t]{2,}")


@dataclass(frozen=True)
class SanitizeRules:
    strip_inline_tags: bool = True
    strip_prompt_echo: bool = True
    trim_whitespace: bool = True
    drop_role_prefixes: tuple[str, ...] = ("Assistant:",)


@dataclass(frozen=True)
class SanitizeResult:
    text: str
    removed: tuple[str, ...]

    @property
    def empty(self) -> bool:
        return not self.text


def _strip_tags(text: str, removed: list[str]) -> str:
    for m in _TAG_PAIR.finditer(text):
        removed.append(f"tag:{m.group(1)}")
    text = _TAG_PAIR.sub("", text)
    for m in _TAG_MARK.finditer(text):
        removed.append(f"marker:{m.group(0)}")
    return _TAG_MARK.sub("", text)


def _strip_echo(text: str, prompts: Sequence[str], removed: list[str]) -> str:
    blocks = [p.strip() for p in prompts if p and p.strip()]
    body = text.lstrip()
    for b in blocks:
        if body.startswith(b):
            removed.append("echo:prompt")
            return body[len(b):]
    prompt_lines = {ln.strip() for b in blocks for ln in b.splitlines() if ln.strip()}
    lines = text.split("\n")
    i = 0
    while i < len(lines) and lines[i].strip() and lines[i].strip() in prompt_lines:
        i += 1
    if i == 0:
        return text
    # keep the loop going only across echoed lines, never eat the reply itself
    removed.append(f"echo:{i}-lines")
    return "\n".join(lines[i:])


def _strip_prefix(text: str, prefixes: Sequence[str], removed: list[str]) -> str:
    body = text.lstrip()
    for p in prefixes:
        if p and body.lower().startswith(p.lower()):
            removed.append(f"prefix:{p}")
            return body[len(p):]
    return text


def _trim(text: str) -> str:
    text = _HSPACE.sub(" ", text)
    return "\n".join(line.strip() for line in text.strip().split("\n"))


def _sanitize_pass(text: str, rules: SanitizeRules, prompts: Sequence[str], removed: list[str]) -> str:
    if rules.strip_inline_tags:
        text = _strip_tags(text, removed)
    if rules.strip_prompt_echo:
        text = _strip_echo(text, prompts, removed)
    if rules.drop_role_prefixes:
        text = _strip_prefix(text, rules.drop_role_prefixes, removed)
    if rules.trim_whitespace:
        text = _trim(text)
    return text


def sanitize_utterance(raw: str, rules: SanitizeRules = SanitizeRules(),
                       context: Sequence[str] = ()) -> SanitizeResult:
    """Remove inline tags, echoed prompt text and role prefixes from ``raw``.

    ``context`` holds the prompts that were sent. Every rule only deletes
    characters, so the pass is repeated until nothing changes; the result is
    therefore a fixed point and sanitizing it again is a no-op.
    """
    removed: list[str] = []
    text = raw
    while True:
        new = _sanitize_pass(text, rules, context, removed)
        if new == text:
            return SanitizeResult(text, tuple(removed))
        text = new
