"""Chat-completion client with a live HTTP backend and a record/replay fixture store."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import socket
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Literal, Protocol

from .errors import FixtureMiss, RateLimited, StorageError, Timeout, TransportError
from .prompts import PromptText

log = logging.getLogger(__name__)

API_KEY_ENV = "SKG_LLM_API_KEY"
DEFAULT_MODEL = "gpt-4"
DEFAULT_BASE_URL = "https://api.openai.com/v1"

FinishReason = Literal["normal", "truncated", "filtered"]


@dataclass(frozen=True)
class LlmRequest:
    model: str
    temperature: float
    system: str
    user: str
    max_output_tokens: int

    def __post_init__(self) -> None:
        if not self.model.strip():
            raise ValueError("model identifier is empty")
        if not self.system.strip() or not self.user.strip():
            raise ValueError("request system and user text must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "temperature": self.temperature,
            "system": self.system,
            "user": self.user,
            "max_output_tokens": self.max_output_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LlmRequest":
        return cls(d["model"], float(d["temperature"]), d["system"], d["user"], int(d["max_output_tokens"]))


@dataclass(frozen=True)
class LlmResponse:
    content: str
    finish_reason: FinishReason = "normal"
    usage: dict[str, int] | None = None

    def __post_init__(self) -> None:
        if self.finish_reason == "normal" and self.content is None:
            raise ValueError("normal responses carry content")

    def to_dict(self) -> dict:
        return {"content": self.content, "finish_reason": self.finish_reason, "usage": self.usage}

    @classmethod
    def from_dict(cls, d: dict) -> "LlmResponse":
        return cls(d.get("content") or "", d.get("finish_reason", "normal"), d.get("usage"))


@dataclass(frozen=True)
class LlmExchange:
    request_hash: str
    request: LlmRequest
    response: LlmResponse
    recorded_at: str = ""

    def to_dict(self) -> dict:
        return {
            "request_hash": self.request_hash,
            "request": self.request.to_dict(),
            "response": self.response.to_dict(),
            "recorded_at": self.recorded_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LlmExchange":
        return cls(d["request_hash"], LlmRequest.from_dict(d["request"]), LlmResponse.from_dict(d["response"]), d.get("recorded_at", ""))


def canonical_request(req: LlmRequest) -> bytes:
    """Fixed field order, no insignificant whitespace, temperature with 3 decimals."""
    enc = lambda s: json.dumps(s, ensure_ascii=False)  # noqa: E731
    text = (
        "{"
        f'"model":{enc(req.model)},'
        f'"temperature":{req.temperature:.3f},'
        f'"system":{enc(req.system)},'
        f'"user":{enc(req.user)},'
        f'"max_output_tokens":{int(req.max_output_tokens)}'
        "}"
    )
    return text.encode("utf-8")


def request_hash(req: LlmRequest) -> str:
    return hashlib.sha256(canonical_request(req)).hexdigest()


@dataclass(frozen=True)
class LlmSettings:
    model: str = DEFAULT_MODEL
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def request(self, prompt: PromptText) -> LlmRequest:
        return LlmRequest(self.model, self.temperature, prompt.system, prompt.user, self.max_output_tokens)


class Backend(Protocol):
    def complete(self, req: LlmRequest) -> LlmResponse: ...


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --- replay ----------------------------------------------------------------

class FixtureStore:
    """JSON-lines store of exchanges keyed by request hash; last write wins."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, LlmExchange] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        try:
            lines = self.path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise StorageError(f"cannot read fixture store {self.path}: {exc.strerror}") from None
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                ex = LlmExchange.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise StorageError(f"{self.path}:{n}: bad exchange record ({exc})") from None
            self._entries[ex.request_hash] = ex

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, digest: str) -> bool:
        return digest in self._entries

    def get(self, digest: str) -> LlmExchange | None:
        return self._entries.get(digest)

    def exchanges(self) -> list[LlmExchange]:
        return list(self._entries.values())

    def add(self, ex: LlmExchange) -> None:
        with self._lock:
            if self.path is not None:
                try:
                    self.path.parent.mkdir(parents=True, exist_ok=True)
                    with self.path.open("a", encoding="utf-8") as fh:
                        fh.write(json.dumps(ex.to_dict(), ensure_ascii=False, sort_keys=False) + "\n")
                except OSError as exc:
                    raise StorageError(f"cannot append to {self.path}: {exc.strerror}") from None
            self._entries[ex.request_hash] = ex


def record(req: LlmRequest, resp: LlmResponse, store_path: str | Path | FixtureStore) -> LlmExchange:
    store = store_path if isinstance(store_path, FixtureStore) else FixtureStore(store_path)
    ex = LlmExchange(request_hash(req), req, resp, _utc_now())
    store.add(ex)
    return ex


class ReplayBackend:
    def __init__(self, store: str | Path | FixtureStore) -> None:
        self.store = store if isinstance(store, FixtureStore) else FixtureStore(store)

    def complete(self, req: LlmRequest) -> LlmResponse:
        digest = request_hash(req)
        ex = self.store.get(digest)
        if ex is None:
            raise FixtureMiss(f"no recorded response for {digest} (user text: {req.user[:80]!r})", digest=digest)
        return ex.response


class RecordingBackend:
    """Delegates to ``inner`` and appends every exchange to ``store``."""

    def __init__(self, inner: Backend, store: str | Path | FixtureStore) -> None:
        self.inner = inner
        self.store = store if isinstance(store, FixtureStore) else FixtureStore(store)

    def complete(self, req: LlmRequest) -> LlmResponse:
        resp = self.inner.complete(req)
        record(req, resp, self.store)
        return resp


class CallableBackend:
    """Backend answering from a Python callable; used for scripted fixtures and tests."""

    def __init__(self, fn: Callable[[LlmRequest], str | LlmResponse]) -> None:
        self.fn = fn

    def complete(self, req: LlmRequest) -> LlmResponse:
        out = self.fn(req)
        return out if isinstance(out, LlmResponse) else LlmResponse(out)


def namespaced_store_path(base: str | Path, run: int) -> Path:
    """Fixture store for consistency run ``run`` (1-based).

    ``base`` is either a path template containing ``{run}`` or a directory
    holding ``run-<n>.jsonl`` files.
    """
    text = str(base)
    if "{run}" in text:
        return Path(text.format(run=run))
    return Path(base) / f"run-{run}.jsonl"


# --- live ------------------------------------------------------------------

_FINISH_MAP = {"stop": "normal", "length": "truncated", "content_filter": "filtered"}


class LiveBackend:
    """OpenAI-compatible ``/chat/completions`` client with bounded retries.

    Retries on HTTP 429, 5xx and connection failures, sleeping
    ``backoff * 2**attempt`` seconds scaled by a random jitter in [0.5, 1.5).
    """

    def __init__(
        self,
        base_url: str = DEFAULT_BASE_URL,
        api_key: str | None = None,
        max_retries: int = 3,
        backoff: float = 1.0,
        timeout: float = 120.0,
        max_in_flight: int = 4,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ) -> None:
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise TransportError(f"no credential: set {API_KEY_ENV}")
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self.attempts = 0

    def _payload(self, req: LlmRequest) -> bytes:
        body = {
            "model": req.model,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
        }
        return json.dumps(body).encode("utf-8")

    def _once(self, req: LlmRequest) -> LlmResponse:
        self.attempts += 1
        http_req = urllib.request.Request(
            self.url,
            data=self._payload(req),
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {self.api_key}"},
            method="POST",
        )
        with urllib.request.urlopen(http_req, timeout=self.timeout) as resp:
            data = json.loads(resp.read().decode("utf-8"))
        choice = data["choices"][0]
        content = (choice.get("message") or {}).get("content") or ""
        finish = _FINISH_MAP.get(choice.get("finish_reason") or "stop", "normal")
        usage = data.get("usage")
        if usage is not None:
            usage = {k: int(v) for k, v in usage.items() if isinstance(v, int)}
        return LlmResponse(content, finish, usage)

    def complete(self, req: LlmRequest) -> LlmResponse:
        with self._slots:
            last: Exception | None = None
            for attempt in range(self.max_retries + 1):
                if attempt:
                    delay = self.backoff * (2 ** (attempt - 1)) * self._rng.uniform(0.5, 1.5)
                    log.info("retrying completion in %.2fs (attempt %d)", delay, attempt + 1)
                    self._sleep(delay)
                try:
                    return self._once(req)
                except urllib.error.HTTPError as exc:
                    if exc.code == 429:
                        last = RateLimited(f"rate limited after {attempt + 1} attempts", status=429)
                    elif exc.code >= 500:
                        last = TransportError(f"HTTP {exc.code} after {attempt + 1} attempts", status=exc.code)
                    else:
                        raise TransportError(f"HTTP {exc.code} from completion endpoint", status=exc.code) from None
                except (socket.timeout, TimeoutError):
                    last = Timeout(f"completion timed out after {attempt + 1} attempts")
                except urllib.error.URLError as exc:
                    last = TransportError(f"cannot reach completion endpoint: {exc.reason}")
                except (ValueError, KeyError, IndexError) as exc:
                    raise TransportError(f"malformed completion payload: {exc}") from None
            assert last is not None
            raise last


def load_exchanges(lines: Iterable[str]) -> list[LlmExchange]:
    return [LlmExchange.from_dict(json.loads(line)) for line in lines if line.strip()]
