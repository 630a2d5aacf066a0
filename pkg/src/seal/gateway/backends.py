"""Chat/embedding backends: remote HTTP provider and scripted (tests, fixtures)."""
from __future__ import annotations

import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Protocol, Union

import httpx
import numpy as np

from seal.gateway.types import (
    ChatRequest,
    ChatResponse,
    EmbedRequest,
    GatewayError,
    ProviderError,
    ScriptExhausted,
    ToolCall,
    TransportError,
)
from seal.schema import canonical_str

log = logging.getLogger(__name__)

ENV_API_KEY = "SEAL_LLM_API_KEY"
ENV_BASE_URL = "SEAL_LLM_BASE_URL"
DEFAULT_BASE_URL = "https://api.openai.com/v1"


class Backend(Protocol):
    calls: int

    def chat(self, request: ChatRequest) -> ChatResponse: ...

    def embed(self, request: EmbedRequest) -> np.ndarray: ...


# --------------------------------------------------------------------------
# scripted

ScriptItem = Union[ChatResponse, dict, str, BaseException, Callable[[ChatRequest], Any]]


def _to_response(item: Any, request: ChatRequest) -> ChatResponse:
    if callable(item) and not isinstance(item, (ChatResponse, dict, str)):
        item = item(request)
    if isinstance(item, BaseException):
        raise item
    if isinstance(item, ChatResponse):
        return item
    if isinstance(item, str):
        return ChatResponse(content=item)
    if isinstance(item, dict):
        return ChatResponse.from_json(item)
    raise TypeError(f"cannot turn {type(item).__name__} into a chat response")


@dataclass
class Route:
    """Responses served to requests matching ``model`` and every ``contains`` needle.

    Needles are matched against the canonical JSON of the request messages.
    """

    responses: deque = field(default_factory=deque)
    model: str | None = None
    contains: tuple[str, ...] = ()

    def matches(self, request: ChatRequest, haystack: str) -> bool:
        if self.model is not None and request.model != self.model:
            return False
        return all(n in haystack for n in self.contains)


class ScriptedBackend:
    """Serves canned responses in order; errors when a script runs out.

    With a plain ``script`` every request takes the next item. With
    ``routes`` a request takes the next item of the first matching route
    that still has items left.
    """

    def __init__(self, script: Iterable[ScriptItem] | None = None,
                 routes: Iterable[Route] | None = None):
        self.routes: list[Route] = list(routes or ())
        if script is not None:
            self.routes.append(Route(responses=deque(script)))
        self.calls = 0
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_json(cls, doc: dict) -> ScriptedBackend:
        """Build from ``{"routes": [{"model", "contains", "responses"}]}`` or ``{"script": [...]}``."""
        routes = []
        for r in doc.get("routes", ()):
            needles = r.get("contains", ())
            needles = (needles,) if isinstance(needles, str) else tuple(needles)
            routes.append(Route(responses=deque(r["responses"]), model=r.get("model"), contains=needles))
        return cls(script=doc.get("script"), routes=routes)

    def _next(self, request: ChatRequest) -> ScriptItem:
        haystack = canonical_str([dict(m) for m in request.messages])
        with self._lock:
            self.calls += 1
            self.requests.append(request)
            for route in self.routes:
                if route.responses and route.matches(request, haystack):
                    return route.responses.popleft()
        raise ScriptExhausted(f"no scripted response left for model {request.model!r}")

    def chat(self, request: ChatRequest) -> ChatResponse:
        return _to_response(self._next(request), request)

    def embed(self, request: EmbedRequest) -> np.ndarray:
        raise GatewayError(f"scripted backend has no embedding model {request.model!r}")

    def remaining(self) -> int:
        return sum(len(r.responses) for r in self.routes)


# --------------------------------------------------------------------------
# rate limiting


class TokenBucket:
    """Token bucket limiting request starts, plus a cap on requests in flight."""

    def __init__(self, rate: float = 10.0, capacity: int = 10, max_concurrent: int = 8,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        self.rate = rate
        self.capacity = capacity
        self._tokens = float(capacity)
        self._stamp = clock()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max_concurrent)

    def _take(self) -> float:
        with self._lock:
            now = self._clock()
            self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
            self._stamp = now
            if self._tokens >= 1.0:
                self._tokens -= 1.0
                return 0.0
            return (1.0 - self._tokens) / self.rate

    def __enter__(self) -> TokenBucket:
        self._slots.acquire()
        while (delay := self._take()) > 0:
            self._sleep(delay)
        return self

    def __exit__(self, *exc: object) -> None:
        self._slots.release()


# --------------------------------------------------------------------------
# remote

_RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class RemoteBackend:
    """Chat-completions-over-HTTP client for any compatible provider."""

    def __init__(self, base_url: str | None = None, api_key: str | None = None, *,
                 transport: httpx.BaseTransport | None = None, timeout: float = 120.0,
                 max_retries: int = 4, backoff: float = 1.0,
                 limiter: TokenBucket | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL) or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        if not self.api_key:
            raise GatewayError(f"remote backend needs credentials; set {ENV_API_KEY}")
        self.max_retries = max_retries
        self.backoff = backoff
        self.limiter = limiter or TokenBucket()
        self.calls = 0
        self._sleep = sleep
        self._client = httpx.Client(
            base_url=self.base_url,
            transport=transport,
            timeout=timeout,
            headers={"Authorization": f"Bearer {self.api_key}"},
        )

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            with self.limiter:
                self.calls += 1
                try:
                    resp = self._client.post(path, json=payload)
                except httpx.TransportError as exc:
                    last = exc
                    log.warning("%s attempt %d failed: %s", path, attempt + 1, exc)
                    continue
            if resp.status_code in _RETRY_STATUS:
                last = ProviderError(resp.status_code, resp.text[:200])
                log.warning("%s attempt %d: HTTP %d", path, attempt + 1, resp.status_code)
                continue
            body = _json_body(resp)
            if resp.status_code >= 400 or "error" in body:
                err = body.get("error") or {}
                code = err.get("code") or resp.status_code if isinstance(err, dict) else resp.status_code
                message = err.get("message", str(err)) if isinstance(err, dict) else str(err)
                raise ProviderError(code, message or resp.text[:200])
            return body
        if isinstance(last, ProviderError):
            raise last
        raise TransportError(f"{path} failed after {self.max_retries + 1} attempts: {last}")

    def chat(self, request: ChatRequest) -> ChatResponse:
        payload: dict[str, Any] = {
            "model": request.model,
            "messages": [dict(m) for m in request.messages],
            "temperature": request.temperature,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        if request.tool_specs:
            payload["tools"] = [t.to_wire() for t in request.tool_specs]
            payload["tool_choice"] = request.tool_choice
        body = self._post("/chat/completions", payload)
        try:
            choice = body["choices"][0]
            message = choice["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("malformed", f"unexpected completion body: {exc!r}") from exc
        calls = tuple(
            ToolCall.make(c.get("id") or f"call_{i}", c["function"]["name"], c["function"].get("arguments", ""))
            for i, c in enumerate(message.get("tool_calls") or ())
        )
        content = message.get("content")
        return ChatResponse(
            content=content if content is not None or calls else "",
            tool_calls=calls,
            finish_reason=choice.get("finish_reason") or "stop",
            usage={k: v for k, v in (body.get("usage") or {}).items() if isinstance(v, int)},
        )

    def embed(self, request: EmbedRequest) -> np.ndarray:
        body = self._post("/embeddings", {"model": request.model, "input": list(request.texts)})
        try:
            rows = sorted(body["data"], key=lambda d: d["index"])
            return np.asarray([r["embedding"] for r in rows], dtype=float)
        except (KeyError, TypeError) as exc:
            raise ProviderError("malformed", f"unexpected embedding body: {exc!r}") from exc

    def ping(self) -> None:
        """Cheap reachability check; raises TransportError when the provider is down."""
        try:
            self.calls += 1
            self._client.get("/models")
        except httpx.TransportError as exc:
            raise TransportError(f"provider at {self.base_url} unreachable: {exc}") from exc


def _json_body(resp: httpx.Response) -> dict:
    try:
        body = resp.json()
    except ValueError:
        return {"error": {"code": resp.status_code, "message": resp.text[:200]}}
    return body if isinstance(body, dict) else {"data": body}
