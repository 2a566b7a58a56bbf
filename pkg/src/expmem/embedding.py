"""Vector representations and the similarity arithmetic behind trajectory scoring.

Ships a deterministic offline hashing embedder (so nothing here needs a model
download) plus a thin HTTP client for a remote embedding service, both behind
the same provider contract.
"""

from __future__ import annotations

import hashlib
import math
import re
import threading
from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import requests

from .errors import (
    DimensionMismatchError,
    EmptyTextError,
    ProviderError,
    ZeroVectorError,
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length vector of finite reals."""

    values: tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("embedding vector must be non-empty")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding vector entries must be finite")

    @property
    def dim(self) -> int:
        return len(self.values)

    @cached_property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    @cached_property
    def norm(self) -> float:
        return float(np.linalg.norm(self.array))

    @classmethod
    def from_array(cls, arr: Sequence[float] | np.ndarray) -> EmbeddingVector:
        return cls(values=tuple(float(v) for v in arr))


@runtime_checkable
class EmbeddingProvider(Protocol):
    """Contract for text embedders.

    Implementations must be deterministic for fixed provider state, never
    return the all-zeros vector, keep a constant ``dim`` across calls, and
    tolerate concurrent ``embed`` calls.
    """

    @property
    def dim(self) -> int: ...

    @property
    def provider_id(self) -> str: ...

    def embed(self, text: str) -> EmbeddingVector: ...


def _require_text(text: str) -> str:
    if not text or not text.strip():
        raise EmptyTextError("cannot embed empty text")
    return text


class HashingEmbedder:
    """Deterministic token feature-hashing embedder.

    Scheme (an independent implementation must reproduce these vectors
    bit-for-bit):

    1. Lowercase the text and extract tokens with the regex ``[a-z0-9]+``.
    2. For each token, take ``blake2b(token_utf8, digest_size=8)``. The first
       4 digest bytes, read big-endian, modulo ``dim`` give the bucket; the
       5th byte's low bit gives the sign (+1 if even, -1 if odd).
    3. Accumulate the signs into an integer vector of length ``dim``.
    4. If the accumulated vector is all zeros (no tokens, or exact sign
       cancellation), set the bucket addressed by hashing the full raw text
       the same way to 1.
    5. Convert to float64 and L2-normalize.

    All arithmetic before normalization is integer, so vectors are
    bit-identical across platforms.
    """

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def provider_id(self) -> str:
        return f"hashing-v1-{self._dim}"

    @staticmethod
    def _bucket_sign(data: bytes, dim: int) -> tuple[int, int]:
        digest = hashlib.blake2b(data, digest_size=8).digest()
        bucket = int.from_bytes(digest[:4], "big") % dim
        sign = 1 if digest[4] % 2 == 0 else -1
        return bucket, sign

    def embed(self, text: str) -> EmbeddingVector:
        _require_text(text)
        counts = [0] * self._dim
        for token in _TOKEN_RE.findall(text.lower()):
            bucket, sign = self._bucket_sign(token.encode("utf-8"), self._dim)
            counts[bucket] += sign
        if not any(counts):
            bucket, _ = self._bucket_sign(text.encode("utf-8"), self._dim)
            counts[bucket] = 1
        arr = np.asarray(counts, dtype=np.float64)
        arr /= np.linalg.norm(arr)
        return EmbeddingVector.from_array(arr)


class RemoteEmbedder:
    """Client for a single-endpoint embedding service.

    Request body: ``{"texts": [<text>, ...]}``; response body:
    ``{"vectors": [[...], ...]}``. One retry on any failure, then
    ``ProviderError`` — no silent fallback.
    """

    def __init__(
        self,
        endpoint: str,
        dim: int,
        *,
        model: str | None = None,
        token: str | None = None,
        timeout: float = 30.0,
    ):
        self._endpoint = endpoint
        self._dim = dim
        self._model = model
        self._token = token
        self._timeout = timeout

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def provider_id(self) -> str:
        return f"remote:{self._model or self._endpoint}"

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        for text in texts:
            _require_text(text)
        payload: dict = {"texts": list(texts)}
        if self._model:
            payload["model"] = self._model
        headers = {}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        last_error: Exception | None = None
        for _ in range(2):
            try:
                resp = requests.post(
                    self._endpoint, json=payload, headers=headers, timeout=self._timeout
                )
                resp.raise_for_status()
                vectors = resp.json()["vectors"]
                if len(vectors) != len(texts):
                    raise ValueError(
                        f"expected {len(texts)} vectors, got {len(vectors)}"
                    )
                out = [EmbeddingVector.from_array(v) for v in vectors]
                for vec in out:
                    if vec.dim != self._dim:
                        raise ValueError(
                            f"provider returned dim {vec.dim}, configured {self._dim}"
                        )
                return out
            except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
                last_error = exc
        raise ProviderError(f"embedding endpoint failed: {last_error}") from last_error


class CachedEmbedder:
    """Bounded LRU cache around a provider, keyed by exact text.

    Histories get re-embedded at every step; caching avoids redundant
    provider calls without changing results. Updates are serialized.
    """

    def __init__(self, inner: EmbeddingProvider, max_entries: int = 10_000):
        if max_entries < 1:
            raise ValueError("max_entries must be >= 1")
        self._inner = inner
        self._max_entries = max_entries
        self._cache: OrderedDict[str, EmbeddingVector] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @property
    def dim(self) -> int:
        return self._inner.dim

    @property
    def provider_id(self) -> str:
        return self._inner.provider_id

    def __len__(self) -> int:
        return len(self._cache)

    def embed(self, text: str) -> EmbeddingVector:
        with self._lock:
            cached = self._cache.get(text)
            if cached is not None:
                self._cache.move_to_end(text)
                self.hits += 1
                return cached
            self.misses += 1
        vector = self._inner.embed(text)
        with self._lock:
            self._cache[text] = vector
            self._cache.move_to_end(text)
            while len(self._cache) > self._max_entries:
                self._cache.popitem(last=False)
        return vector


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Standard cosine, clamped into [-1, 1] against rounding drift."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dim {a.dim} vs {b.dim}")
    if a.norm == 0.0 or b.norm == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for zero vectors")
    cos = float(np.dot(a.array, b.array)) / (a.norm * b.norm)
    return max(-1.0, min(1.0, cos))


def trajectory_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine shifted into [0, 1]: (1 + cos)/2."""
    return (1.0 + cosine_similarity(a, b)) / 2.0
