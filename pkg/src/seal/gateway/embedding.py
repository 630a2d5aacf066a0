from __future__ import annotations

import hashlib
import re

import numpy as np

_TOKEN_RE = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


class HashingEmbedder:
    """Deterministic signed feature-hashing embedder.

    Tokens are lowercase alphanumeric runs. Each token adds +1 or -1 to one
    of ``dim`` buckets, chosen from a blake2b digest so results do not
    depend on the interpreter's hash seed. Vectors are L2-normalized; text
    without tokens maps to the unit vector on axis 0.
    """

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = dim

    @property
    def model(self) -> str:
        return f"hashing-{self.dim}"

    def bucket(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        return (value >> 1) % self.dim, (1.0 if value & 1 else -1.0)

    def embed_one(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in tokenize(text):
            idx, sign = self.bucket(token)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return vec / norm

    def embed(self, texts: list[str]) -> np.ndarray:
        if not texts:
            raise ValueError("nothing to embed")
        return np.stack([self.embed_one(t) for t in texts])


def hashing_dim(model: str) -> int | None:
    """Dimension encoded in a ``hashing`` / ``hashing-<d>`` model name, else None."""
    if model == "hashing":
        return 256
    m = re.fullmatch(r"hashing-(\d+)", model)
    return int(m.group(1)) if m else None
