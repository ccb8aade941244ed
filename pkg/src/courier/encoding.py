"""Tokenization and frozen token embeddings.

Embeddings are never trained. Two sources: a deterministic hash scheme
(64-bit FNV-1a of the token seeding a splitmix64 stream, mapped to uniform
values in [-1, 1]) and a binary cache file produced offline. Cache entries
may be keyed by bare token or by ``<description-hash>:<token-index>`` for
context-dependent vectors; anything missing falls back to hash vectors.
"""

from __future__ import annotations

import re
import struct

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace; punctuation becomes its own token."""
    if not text:
        raise ValueError("cannot tokenize empty text")
    return _TOKEN_RE.findall(text.lower())


def fnv1a64(data: str) -> int:
    h = FNV_OFFSET
    for byte in data.encode("utf-8"):
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def _splitmix64(state: int):
    while True:
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        yield z ^ (z >> 31)


def hash_embedding(token: str, dim: int) -> np.ndarray:
    """Deterministic pseudo-random vector in [-1, 1]^dim for a token."""
    gen = _splitmix64(fnv1a64(token))
    vals = np.fromiter((next(gen) for _ in range(dim)), dtype=np.uint64, count=dim)
    # top 53 bits -> [0, 1) doubles, shifted to [-1, 1)
    return ((vals >> np.uint64(11)).astype(np.float64) * 2.0 ** -53) * 2.0 - 1.0


def description_key(tokens: list[str]) -> str:
    """Stable identifier for one description's token sequence."""
    return format(fnv1a64(" ".join(tokens)), "016x")


CACHE_MAGIC = b"EMBC"
CACHE_VERSION = 1


def write_cache(path, dim: int, entries: dict[str, np.ndarray]) -> None:
    """Write the embedding cache: header then length-prefixed key/vector records."""
    for key, vec in entries.items():
        if vec.shape != (dim,):
            raise ValueError(f"entry {key!r} has shape {vec.shape}, expected ({dim},)")
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<III", CACHE_VERSION, dim, len(entries)))
        for key, vec in entries.items():
            kb = key.encode("utf-8")
            f.write(struct.pack("<I", len(kb)))
            f.write(kb)
            f.write(np.asarray(vec, dtype="<f4").tobytes())


def read_cache(path) -> tuple[int, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        if f.read(4) != CACHE_MAGIC:
            raise ValueError(f"{path}: not an embedding cache file")
        version, dim, count = struct.unpack("<III", f.read(12))
        if version != CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        entries = {}
        for _ in range(count):
            (klen,) = struct.unpack("<I", f.read(4))
            key = f.read(klen).decode("utf-8")
            entries[key] = np.frombuffer(f.read(4 * dim), dtype="<f4").astype(np.float64)
    return dim, entries


class TokenEmbeddingTable:
    """Frozen token -> vector map; hash-backed, optionally cache-backed.

    Lookups are memoized. ``fallback_count`` tracks cache misses served by
    the hash scheme, so loaders can verify full coverage.
    """

    def __init__(self, dim: int = 64, cache_path=None):
        self.dim = dim
        self.source = "hash-deterministic"
        self._cache: dict[str, np.ndarray] = {}
        self._memo: dict[str, np.ndarray] = {}
        self.fallback_count = 0
        if cache_path is not None:
            file_dim, entries = read_cache(cache_path)
            if file_dim != dim:
                raise ValueError(
                    f"cache dimension {file_dim} does not match configured dim {dim}")
            self._cache = entries
            self.source = "cache-file"

    @property
    def has_contextual(self) -> bool:
        return any(":" in k for k in self._cache)

    def _vector(self, token: str) -> np.ndarray:
        hit = self._cache.get(token)
        if hit is not None:
            return hit
        if self.source == "cache-file":
            self.fallback_count += 1
        vec = self._memo.get(token)
        if vec is None:
            vec = hash_embedding(token, self.dim)
            self._memo[token] = vec
        return vec

    def embed(self, tokens: list[str]) -> np.ndarray:
        """Rows are per-token vectors, in order. Contextual entries (keyed by
        description hash and position) win over bare-token entries."""
        if self.has_contextual:
            key = description_key(tokens)
            rows = []
            for i, tok in enumerate(tokens):
                hit = self._cache.get(f"{key}:{i}")
                rows.append(hit if hit is not None else self._vector(tok))
            return np.stack(rows)
        return np.stack([self._vector(t) for t in tokens])

    def checksum(self) -> int:
        """Order-independent digest of every vector handed out so far."""
        acc = 0
        for k in sorted(set(self._memo) | set(self._cache)):
            src = self._cache.get(k)
            if src is None:
                src = self._memo[k]
            acc ^= fnv1a64(k + ":" + src.astype("<f8").tobytes().hex())
        return acc
