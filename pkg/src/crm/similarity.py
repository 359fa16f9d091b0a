"""Sentence-embedding backends for semantic similarity.

Every backend maps a list of strings to unit-norm vectors of a fixed
dimension. ``LexicalBackend`` is deterministic and dependency-free and
serves as the reference in tests; ``MiniLMBackend`` wraps
sentence-transformers; ``HttpEmbeddingBackend`` talks to a service that
accepts a JSON list of strings and returns a JSON list of vectors.
"""

from __future__ import annotations

import hashlib
import re
from typing import Protocol, Sequence

import httpx
import numpy as np


class BackendUnavailableError(Exception):
    pass


class SimilarityBackend(Protocol):
    name: str
    version: str

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)


class LexicalBackend:
    """Hashed bag-of-words counts, L2-normalised.

    Texts without any alphanumeric token map to the zero vector, whose
    similarity to anything is 0.
    """

    name = "lexical"

    def __init__(self, dim: int = 1 << 16):
        self.dim = dim
        self.version = f"1-d{dim}"

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            for tok in tokenize(text):
                out[row, self.bucket(tok)] += 1.0
        return _unit_rows(out)


class MiniLMBackend:
    """sentence-transformers ``all-MiniLM-L6-v2``, loaded lazily on first use."""

    name = "minilm"

    def __init__(self, model_name: str = "all-MiniLM-L6-v2", device: str | None = None):
        self.model_name = model_name
        self.device = device
        self._model = None
        self.version = model_name

    def _load(self):
        if self._model is None:
            try:
                from sentence_transformers import SentenceTransformer

                self._model = SentenceTransformer(self.model_name, device=self.device)
            except Exception as exc:
                raise BackendUnavailableError(f"cannot load {self.model_name}: {exc}") from exc
        return self._model

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        model = self._load()
        vecs = model.encode(list(texts), convert_to_numpy=True, normalize_embeddings=True,
                            show_progress_bar=False)
        return _unit_rows(np.asarray(vecs, dtype=np.float64))


class HttpEmbeddingBackend:
    name = "http"

    def __init__(self, url: str, *, version: str = "unversioned", timeout: float = 30.0,
                 client: httpx.Client | None = None):
        self.url = url
        self.version = version
        self.client = client or httpx.Client(timeout=timeout)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, 0))
        try:
            resp = self.client.post(self.url, json=list(texts))
            resp.raise_for_status()
            data = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise BackendUnavailableError(f"embedding service {self.url}: {exc}") from exc
        if not isinstance(data, list) or len(data) != len(texts):
            raise BackendUnavailableError("embedding service returned a malformed payload")
        try:
            mat = np.asarray(data, dtype=np.float64)
        except ValueError as exc:
            raise BackendUnavailableError("embedding vectors have unequal lengths") from exc
        if mat.ndim != 2:
            raise BackendUnavailableError("embedding vectors have unequal lengths")
        return _unit_rows(mat)


def backend_id(backend: SimilarityBackend) -> str:
    return f"{backend.name}:{backend.version}"


def make_backend(spec: str) -> SimilarityBackend:
    """Build a backend from a CLI string: ``lexical``, ``minilm`` or ``http:<url>``."""
    if spec == "lexical":
        return LexicalBackend()
    if spec == "minilm":
        return MiniLMBackend()
    if spec.startswith("http:") or spec.startswith("https:"):
        url = spec[len("http:"):] if spec.startswith("http:") and not spec.startswith("http://") else spec
        return HttpEmbeddingBackend(url)
    raise ValueError(f"unknown similarity backend {spec!r}")


def similarity_matrix(backend: SimilarityBackend, left: Sequence[str], right: Sequence[str]) -> np.ndarray:
    """Pairwise cosine similarities clamped to [0, 1]."""
    if not left or not right:
        return np.zeros((len(left), len(right)))
    vecs = backend.embed(list(left) + list(right))
    a, b = vecs[: len(left)], vecs[len(left):]
    return np.clip(a @ b.T, 0.0, 1.0)


def similarity(backend: SimilarityBackend, a: str, b: str) -> float:
    if not a or not b:
        raise ValueError("similarity needs two non-empty strings")
    va, vb = backend.embed([a, b])
    return float(min(1.0, max(0.0, float(np.dot(va, vb)))))
