"""Exact cosine-similarity retrieval over API documents."""
from __future__ import annotations

import base64
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from seal.schema import ApiDoc, canonical_json, parse_json

DEFAULT_K = 10
SCORE_DECIMALS = 12
_BATCH = 256


class Embedder(Protocol):
    model: str

    def embed(self, texts: list[str]) -> np.ndarray: ...


class GatewayEmbedder:
    """Adapts a :class:`~seal.gateway.Gateway` to the embedder protocol."""

    def __init__(self, gateway, model: str):
        self.gateway = gateway
        self.model = model

    def embed(self, texts: list[str]) -> np.ndarray:
        return self.gateway.embed(texts, self.model)


class RetrievalError(ValueError):
    pass


class EmbeddingFailure(RuntimeError):
    def __init__(self, api_id: str, cause: BaseException):
        super().__init__(f"embedding failed for {api_id}: {cause}")
        self.api_id = api_id


def api_text(api: ApiDoc) -> str:
    """The document embedded for ``api``; absent fields are skipped."""
    lines = [api.category, api.tool_name, api.api_name, api.description]
    for p in api.parameters:
        lines.append(f"{p.name}: {p.description}" if p.description else p.name)
    return "\n".join(line for line in lines if line)


@dataclass(frozen=True)
class ApiIndex:
    ids: tuple[str, ...]
    vectors: np.ndarray
    model: str
    built_at: str = ""

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)


def _normalize(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise RetrievalError("cannot normalize a zero embedding vector")
    return vectors / norms


def build_index(apis: Sequence[ApiDoc], embedder: Embedder) -> ApiIndex:
    if not apis:
        raise RetrievalError("cannot build an index over zero APIs")
    ids = [a.id for a in apis]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise RetrievalError(f"duplicate ApiDoc ids: {', '.join(dup)}")
    chunks = []
    for start in range(0, len(apis), _BATCH):
        batch = list(apis[start:start + _BATCH])
        try:
            chunks.append(np.asarray(embedder.embed([api_text(a) for a in batch]), dtype=float))
        except Exception as exc:
            raise EmbeddingFailure(_offender(batch, embedder, exc), exc) from exc
    vectors = _normalize(np.concatenate(chunks))
    built = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return ApiIndex(ids=tuple(ids), vectors=vectors, model=embedder.model, built_at=built)


def _offender(batch: list[ApiDoc], embedder: Embedder, exc: BaseException) -> str:
    for api in batch:
        try:
            embedder.embed([api_text(api)])
        except Exception:
            return api.id
    return batch[0].id


def cosine_scores(index: ApiIndex, query_vec: np.ndarray) -> np.ndarray:
    """Cosine of every indexed vector with ``query_vec``.

    Row sums use ``math.fsum`` so a score does not depend on the order of
    the vector components, and are rounded to ``SCORE_DECIMALS`` so that
    equal similarities compare equal and fall to the id tie-break.
    """
    q = np.asarray(query_vec, dtype=float)
    norm = np.linalg.norm(q)
    if norm == 0:
        raise RetrievalError("query embedding is the zero vector")
    products = index.vectors * (q / norm)
    return np.array([round(math.fsum(row), SCORE_DECIMALS) for row in products.tolist()])


def rank(index: ApiIndex, query_vec: np.ndarray) -> list[tuple[str, float]]:
    scores = cosine_scores(index, query_vec)
    id_rank = np.argsort(np.array(index.ids, dtype=object), kind="stable")
    id_pos = np.empty(len(index), dtype=np.int64)
    id_pos[id_rank] = np.arange(len(index))
    order = np.lexsort((id_pos, -scores))
    return [(index.ids[i], float(scores[i])) for i in order]


def search(index: ApiIndex, query_text: str, k: int, embedder: Embedder) -> list[tuple[str, float]]:
    """Top ``min(k, len(index))`` (id, score) pairs by descending cosine, ties by ascending id."""
    if k < 1:
        raise ValueError("k must be positive")
    if embedder.model != index.model:
        raise RetrievalError(f"index built with {index.model!r}, query embedder is {embedder.model!r}")
    vec = np.asarray(embedder.embed([query_text]), dtype=float)[0]
    if vec.shape[0] != index.dim:
        raise RetrievalError(f"query dimension {vec.shape[0]} does not match index dimension {index.dim}")
    return rank(index, vec)[:k]


# --------------------------------------------------------------------------
# persistence


def save_index(index: ApiIndex, path: str | Path) -> None:
    header = {"model": index.model, "dim": index.dim, "count": len(index),
              "ids": list(index.ids), "built_at": index.built_at, "dtype": "float32"}
    block = base64.b64encode(np.ascontiguousarray(index.vectors, dtype="<f4").tobytes()).decode("ascii")
    Path(path).write_bytes(canonical_json({"header": header, "vectors": block}) + b"\n")


def load_index(path: str | Path) -> ApiIndex:
    doc = parse_json(Path(path).read_bytes())
    header = doc["header"]
    ids = tuple(header["ids"])
    dim, count = int(header["dim"]), int(header["count"])
    if len(ids) != count:
        raise RetrievalError(f"{path}: header lists {len(ids)} ids but declares {count}")
    raw = base64.b64decode(doc["vectors"])
    if len(raw) != count * dim * 4:
        raise RetrievalError(f"{path}: vector block holds {len(raw)} bytes, expected {count * dim * 4}")
    vectors = np.frombuffer(raw, dtype="<f4").reshape(count, dim).astype(float)
    return ApiIndex(ids=ids, vectors=vectors, model=header["model"], built_at=header.get("built_at", ""))
