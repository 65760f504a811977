"""Sentence embeddings: pluggable backend, persistent cache, offline test provider."""

from __future__ import annotations

import hashlib
import json
import os
import threading
import unicodedata
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from filelock import FileLock

from skilldecomp.errors import BackendError, DimensionMismatchError, EmbeddingError, EmptyTextError

DETERMINISTIC = "deterministic-test"
DEFAULT_MODEL = "paraphrase-multilingual-mpnet-base-v2"


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    provider_id: str

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other):
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.provider_id == other.provider_id and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class ProviderConfig:
    provider_id: str = DEFAULT_MODEL
    endpoint: str = DETERMINISTIC  # URL, or "deterministic-test"
    batch_size: int = 64
    timeout: float = 30.0
    cache_path: str | None = None
    auth_env_var: str | None = None
    max_in_flight: int = 4
    seed: int = 0  # deterministic-test only
    dim: int = 256  # deterministic-test only

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    @classmethod
    def deterministic(cls, seed: int = 0, dim: int = 256, cache_path: str | None = None) -> ProviderConfig:
        return cls(
            provider_id=f"{DETERMINISTIC}/seed={seed}/dim={dim}",
            endpoint=DETERMINISTIC,
            cache_path=cache_path,
            seed=seed,
            dim=dim,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _unit(values: np.ndarray, provider_id: str) -> EmbeddingVector:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or not np.all(np.isfinite(values)):
        raise EmbeddingError("embedding must be a finite 1-D vector")
    norm = float(np.linalg.norm(values))
    if norm == 0.0:
        raise EmbeddingError("zero vector cannot be normalized")
    return EmbeddingVector(values / norm, provider_id)


def _trigram_slot(gram: str, seed: int, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=str(seed).encode()).digest()
    h = int.from_bytes(digest, "little")
    return h % dim, (1.0 if (h >> 63) == 0 else -1.0)


def deterministic_test_embed(text: str, seed: int = 0, dim: int = 256) -> EmbeddingVector:
    """Hash character trigrams of the NFKC-casefolded text into a signed ``dim``-vector.

    Strings shorter than three characters contribute themselves as a single gram.
    """
    if dim < 8:
        raise ValueError("dim must be >= 8")
    norm = unicodedata.normalize("NFKC", unicodedata.normalize("NFKC", text).casefold())
    if not norm.strip():
        raise EmptyTextError("text is empty after normalization")
    grams = [norm[i : i + 3] for i in range(len(norm) - 2)] or [norm]
    acc = np.zeros(dim)
    for gram in grams:
        idx, sign = _trigram_slot(gram, seed, dim)
        acc[idx] += sign
    return _unit(acc, f"{DETERMINISTIC}/seed={seed}/dim={dim}")


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.provider_id != b.provider_id:
        raise DimensionMismatchError(f"provider mismatch: {a.provider_id!r} vs {b.provider_id!r}")
    return float(np.dot(a.values, b.values))


class EmbeddingCache:
    """Content-addressed on-disk vector store for one provider.

    Layout under ``root/<provider digest>/``: ``vectors.bin`` holds little-endian
    float64 rows appended in insertion order; ``index.json`` maps the sha256 of
    each text's UTF-8 bytes to its row. Entries are never evicted.
    """

    def __init__(self, root: str | Path, provider_id: str):
        self.provider_id = provider_id
        slug = hashlib.sha256(provider_id.encode()).hexdigest()[:16]
        self.dir = Path(root) / slug
        self.dir.mkdir(parents=True, exist_ok=True)
        self.index_path = self.dir / "index.json"
        self.data_path = self.dir / "vectors.bin"
        self._lock = threading.Lock()
        self._file_lock = FileLock(str(self.dir / ".lock"))
        self.dim: int | None = None
        self._rows: dict[str, int] = {}
        self._mem: dict[str, np.ndarray] = {}
        self._reload()

    @staticmethod
    def key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def _reload(self) -> None:
        if self.index_path.exists():
            meta = json.loads(self.index_path.read_text(encoding="utf-8"))
            if meta["provider_id"] != self.provider_id:
                raise EmbeddingError(f"cache at {self.dir} belongs to {meta['provider_id']!r}")
            self.dim = meta["dim"]
            self._rows = dict(meta["entries"])

    def __len__(self) -> int:
        return len(self._rows)

    def get(self, text: str) -> np.ndarray | None:
        k = self.key(text)
        with self._lock:
            if k in self._mem:
                return self._mem[k]
            row = self._rows.get(k)
            if row is None:
                return None
            with open(self.data_path, "rb") as fh:
                fh.seek(row * self.dim * 8)
                vec = np.frombuffer(fh.read(self.dim * 8), dtype="<f8").copy()
            self._mem[k] = vec
            return vec

    def put_many(self, items: Sequence[tuple[str, np.ndarray]]) -> None:
        if not items:
            return
        with self._lock, self._file_lock:
            self._reload()
            for text, vec in items:
                if self.dim is None:
                    self.dim = int(vec.shape[0])
                elif vec.shape[0] != self.dim:
                    raise DimensionMismatchError(f"backend returned dim {vec.shape[0]}, cache holds dim {self.dim}")
            new = [(self.key(t), v) for t, v in items if self.key(t) not in self._rows]
            if new:
                size = self.data_path.stat().st_size if self.data_path.exists() else 0
                with open(self.data_path, "ab") as fh:
                    start = size // (self.dim * 8)
                    for offset, (k, v) in enumerate(new):
                        fh.write(np.asarray(v, dtype="<f8").tobytes())
                        self._rows[k] = start + offset
                        self._mem[k] = np.asarray(v, dtype=np.float64)
                tmp = self.index_path.with_suffix(".tmp")
                tmp.write_text(
                    json.dumps({"provider_id": self.provider_id, "dim": self.dim, "entries": self._rows}),
                    encoding="utf-8",
                )
                os.replace(tmp, self.index_path)


class EmbeddingProvider:
    """Embeds texts through the configured backend with write-through caching.

    ``backend_calls`` counts requests that reached the backend (HTTP requests,
    or hash computations for the deterministic provider).
    """

    def __init__(self, config: ProviderConfig, *, http_client=None):
        self.config = config
        self.backend_calls = 0
        self._mem: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self._inflight = threading.BoundedSemaphore(config.max_in_flight)
        self._cache = EmbeddingCache(config.cache_path, config.provider_id) if config.cache_path else None
        self._http = http_client

    @property
    def provider_id(self) -> str:
        return self.config.provider_id

    def _lookup(self, text: str) -> np.ndarray | None:
        with self._lock:
            vec = self._mem.get(text)
        if vec is None and self._cache is not None:
            vec = self._cache.get(text)
            if vec is not None:
                with self._lock:
                    self._mem[text] = vec
        return vec

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise EmptyTextError("texts must be non-empty")
        for t in texts:
            if not t or not t.strip():
                raise EmptyTextError("cannot embed an empty text")
        found = {t: v for t in dict.fromkeys(texts) if (v := self._lookup(t)) is not None}
        missing = [t for t in dict.fromkeys(texts) if t not in found]
        for start in range(0, len(missing), self.config.batch_size):
            chunk = missing[start : start + self.config.batch_size]
            fresh = self._compute(chunk)
            with self._lock:
                self._mem.update(fresh)
            if self._cache is not None:
                self._cache.put_many(list(fresh.items()))
            found.update(fresh)
        return [EmbeddingVector(found[t], self.provider_id) for t in texts]

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_batch([text])[0]

    def _compute(self, texts: list[str]) -> dict[str, np.ndarray]:
        with self._inflight:
            with self._lock:
                self.backend_calls += 1
            if self.config.endpoint == DETERMINISTIC:
                return {
                    t: deterministic_test_embed(t, self.config.seed, self.config.dim).values for t in texts
                }
            raw = self._post(texts)
        if len(raw) != len(texts):
            raise BackendError(f"backend returned {len(raw)} vectors for {len(texts)} texts")
        out = {}
        dim = None
        for t, values in zip(texts, raw):
            vec = _unit(values, self.provider_id).values
            if dim is not None and vec.shape[0] != dim:
                raise DimensionMismatchError("backend returned vectors of differing dimension")
            dim = vec.shape[0]
            out[t] = vec
        if self._cache is not None and self._cache.dim is not None and dim != self._cache.dim:
            raise DimensionMismatchError(f"backend returned dim {dim}, cache holds dim {self._cache.dim}")
        return out

    def _post(self, texts: list[str]) -> list[list[float]]:
        import httpx

        headers = {}
        if self.config.auth_env_var:
            token = os.environ.get(self.config.auth_env_var)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        client = self._http or httpx.Client(timeout=self.config.timeout)
        try:
            resp = client.post(
                self.config.endpoint,
                json={"model": self.config.provider_id, "texts": texts},
                headers=headers,
            )
            resp.raise_for_status()
            return resp.json()["vectors"]
        except httpx.HTTPError as exc:
            raise BackendError(f"embedding backend unreachable: {exc}") from exc
        except (KeyError, ValueError) as exc:
            raise BackendError(f"malformed embedding response: {exc}") from exc
        finally:
            if self._http is None:
                client.close()


def embed_batch(texts: Sequence[str], config: ProviderConfig) -> list[EmbeddingVector]:
    """One-shot convenience wrapper; long-lived callers should keep an :class:`EmbeddingProvider`."""
    return EmbeddingProvider(config).embed_batch(texts)
