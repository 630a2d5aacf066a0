"""All chat-completion and embedding traffic goes through :class:`Gateway`."""
from __future__ import annotations

from typing import Any

import numpy as np

from seal.gateway.backends import (
    ENV_API_KEY,
    ENV_BASE_URL,
    RemoteBackend,
    Route,
    ScriptedBackend,
    TokenBucket,
)
from seal.gateway.embedding import HashingEmbedder, hashing_dim
from seal.gateway.replay import RecordReplayBackend, ReplayStore
from seal.gateway.types import (
    ChatRequest,
    ChatResponse,
    EmbedRequest,
    GatewayError,
    ProviderError,
    ReplayMiss,
    ScriptExhausted,
    ToolCall,
    ToolSpec,
    TransportError,
    messages,
    request_fingerprint,
)


class Gateway:
    """Front door for a backend.

    ``hashing``/``hashing-<d>`` embedding models are computed locally and
    never reach the backend.
    """

    def __init__(self, backend: Any):
        self.backend = backend
        self._embedders: dict[int, HashingEmbedder] = {}
        self._dims: dict[str, int] = {}

    @property
    def calls(self) -> int:
        """Transport operations performed by the underlying backend."""
        return self.backend.calls

    def chat(self, request: ChatRequest) -> ChatResponse:
        return self.backend.chat(request)

    def embed(self, texts: list[str], model: str) -> np.ndarray:
        if not texts:
            raise ValueError("embed needs at least one text")
        dim = hashing_dim(model)
        if dim is not None:
            embedder = self._embedders.setdefault(dim, HashingEmbedder(dim))
            return embedder.embed(list(texts))
        vectors = self.backend.embed(EmbedRequest(model=model, texts=tuple(texts)))
        if len(vectors) != len(texts):
            raise GatewayError(f"embedding backend returned {len(vectors)} vectors for {len(texts)} texts")
        dim = self._dims.setdefault(model, vectors.shape[1])
        if vectors.shape[1] != dim:
            raise GatewayError(f"{model} changed dimension from {dim} to {vectors.shape[1]}")
        return vectors


__all__ = [
    "ENV_API_KEY",
    "ENV_BASE_URL",
    "ChatRequest",
    "ChatResponse",
    "EmbedRequest",
    "Gateway",
    "GatewayError",
    "HashingEmbedder",
    "ProviderError",
    "RecordReplayBackend",
    "RemoteBackend",
    "ReplayMiss",
    "ReplayStore",
    "Route",
    "ScriptExhausted",
    "ScriptedBackend",
    "TokenBucket",
    "ToolCall",
    "ToolSpec",
    "TransportError",
    "messages",
    "request_fingerprint",
]
