"""Record-replay store keyed by request fingerprint."""
from __future__ import annotations

import os
import tempfile
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from seal.flight import SingleFlight
from seal.gateway.types import (
    ChatRequest,
    ChatResponse,
    EmbedRequest,
    ReplayMiss,
    request_fingerprint,
)
from seal.schema import canonical_json, parse_json


def write_once(path: Path, data: bytes) -> bool:
    """Atomically create ``path`` with ``data``; never replaces an existing file.

    Returns False when the file already existed.
    """
    if path.exists():
        return False
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.link(tmp, path)
        return True
    except FileExistsError:
        return False
    finally:
        os.unlink(tmp)


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class ReplayStore:
    """One file per fingerprint holding canonical ``{request, response, recorded_at}``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._memo: dict[str, Any] = {}
        self._lock = threading.Lock()

    def path(self, fingerprint: str) -> Path:
        return self.root / fingerprint

    def get(self, fingerprint: str) -> Any | None:
        with self._lock:
            if fingerprint in self._memo:
                return self._memo[fingerprint]
        p = self.path(fingerprint)
        if not p.exists():
            return None
        response = parse_json(p.read_bytes())["response"]
        with self._lock:
            self._memo[fingerprint] = response
        return response

    def put(self, fingerprint: str, request: dict, response: Any) -> None:
        body = canonical_json({"request": request, "response": response, "recorded_at": utc_now()})
        with self._lock:
            if write_once(self.path(fingerprint), body + b"\n"):
                self._memo[fingerprint] = parse_json(canonical_json(response))
            else:
                self._memo.pop(fingerprint, None)

    def __contains__(self, fingerprint: str) -> bool:
        return self.get(fingerprint) is not None

    def __len__(self) -> int:
        return sum(1 for p in self.root.iterdir() if not p.name.startswith("."))


class RecordReplayBackend:
    """Serves recorded responses; on a miss records from ``inner`` or, when strict, fails.

    Returned responses are always rebuilt from their stored JSON form, so a
    freshly recorded response and its later replay are identical.
    """

    def __init__(self, store: ReplayStore, inner: Any = None, *, strict: bool = False):
        self.store = store
        self.inner = inner
        self.strict = strict or inner is None
        self._flight: SingleFlight[Any] = SingleFlight()

    @property
    def calls(self) -> int:
        return getattr(self.inner, "calls", 0)

    def _lookup(self, request: ChatRequest | EmbedRequest, fetch) -> Any:
        fp = request_fingerprint(request)
        hit = self.store.get(fp)
        if hit is not None:
            return hit
        if self.strict:
            raise ReplayMiss(fp)

        def record() -> Any:
            hit = self.store.get(fp)
            if hit is not None:
                return hit
            response = fetch()
            self.store.put(fp, request.to_json(), response)
            return self.store.get(fp)

        return self._flight.do(fp, record)[0]

    def chat(self, request: ChatRequest) -> ChatResponse:
        doc = self._lookup(request, lambda: self.inner.chat(request).to_json())
        return ChatResponse.from_json(doc)

    def embed(self, request: EmbedRequest) -> np.ndarray:
        doc = self._lookup(request, lambda: self.inner.embed(request).tolist())
        return np.asarray(doc, dtype=float)
