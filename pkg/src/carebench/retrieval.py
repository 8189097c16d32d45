"""Criteria retrieval: embed user content and subtype criteria documents,
score them by cosine similarity, and select the best match.

Two embedding providers share one contract: a remote HTTP provider speaking
a documented embedding endpoint, and a deterministic offline fallback
(hashed bag-of-words) so retrieval tests run without network access.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

from .domain import Dialogue, DomainError, Speaker

logger = logging.getLogger(__name__)


class TransportError(RuntimeError):
    """A retryable transport-level failure talking to a remote provider."""


@dataclass(frozen=True)
class CriteriaDocument:
    index: int
    subtype_name: str
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise DomainError("criteria document text must be non-empty")


@dataclass(frozen=True)
class CriteriaCorpus:
    documents: tuple[CriteriaDocument, ...]
    source_id: str = ""

    def __post_init__(self) -> None:
        if not self.documents:
            raise DomainError("criteria corpus must contain at least one document")
        for expected, doc in enumerate(self.documents):
            if doc.index != expected:
                raise DomainError(
                    f"corpus indices must be contiguous 0..N-1; got {doc.index} at position {expected}"
                )


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.values)

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in self.values):
            raise DomainError("embedding vector entries must be finite")


@dataclass(frozen=True)
class RetrievalResult:
    index: int
    document: CriteriaDocument
    score: float


class EmbeddingProvider(Protocol):
    """Maps non-empty text to a fixed-dimension vector."""

    @property
    def dim(self) -> int: ...

    def embed(self, text: str) -> EmbeddingVector: ...


_FNV_OFFSET = 2166136261
_FNV_PRIME = 16777619

# Common CJK blocks: unified ideographs, extension A, compatibility ideographs.
_CJK_RANGES = ((0x3400, 0x4DBF), (0x4E00, 0x9FFF), (0xF900, 0xFAFF))

_ALNUM_RUN = re.compile(r"[^\W_]+", re.UNICODE)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def _fnv1a(token: str) -> int:
    h = _FNV_OFFSET
    for b in token.encode("utf-8"):
        h ^= b
        h = (h * _FNV_PRIME) % 2**32
    return h


def tokenize(text: str) -> list[str]:
    """Lowercase tokens split on non-alphanumeric boundaries; CJK codepoints
    become per-character unigrams."""
    tokens: list[str] = []
    for run in _ALNUM_RUN.findall(text.lower()):
        buf: list[str] = []
        for ch in run:
            if _is_cjk(ch):
                if buf:
                    tokens.append("".join(buf))
                    buf = []
                tokens.append(ch)
            else:
                buf.append(ch)
        if buf:
            tokens.append("".join(buf))
    return tokens


class FallbackEmbedder:
    """Deterministic hashed bag-of-words embedder.

    Tokens are FNV-1a hashed into ``buckets`` bins; the count vector is
    L2-normalized. Identical text always yields identical vectors.
    """

    def __init__(self, buckets: int = 256) -> None:
        self._buckets = buckets

    @property
    def dim(self) -> int:
        return self._buckets

    def term_counts(self, text: str) -> list[float]:
        counts = [0.0] * self._buckets
        for token in tokenize(text):
            counts[_fnv1a(token) % self._buckets] += 1.0
        return counts

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise DomainError("cannot embed empty text")
        counts = self.term_counts(text)
        norm = math.sqrt(math.fsum(c * c for c in counts))
        if norm > 0:
            counts = [c / norm for c in counts]
        return EmbeddingVector(values=tuple(counts))


class RemoteEmbedder:
    """Client for an HTTP embedding endpoint.

    Request body: ``{"model": str, "prompt": str}``;
    response body: ``{"embedding": [float, ...]}``.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        dim: int,
        timeout_s: float = 30.0,
        client: httpx.Client | None = None,
    ) -> None:
        self._endpoint = endpoint
        self._model = model
        self._dim = dim
        self._client = client or httpx.Client(timeout=timeout_s)

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise DomainError("cannot embed empty text")
        try:
            resp = self._client.post(self._endpoint, json={"model": self._model, "prompt": text})
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise TransportError(f"embedding endpoint failure: {exc}") from exc
        values = resp.json().get("embedding")
        if not isinstance(values, list):
            raise TransportError("embedding endpoint returned no 'embedding' field")
        return EmbeddingVector(values=tuple(float(v) for v in values))


def extract_user_content(d: Dialogue) -> str:
    """User-turn texts in order, joined by single newlines; assistant text excluded."""
    texts = [t.text for t in d.turns if t.speaker == Speaker.USER]
    if not texts:
        raise DomainError(f"dialogue {d.id} has no user turns")
    return "\n".join(texts)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """a.b / (|a||b|); raises on dimension mismatch or a zero-norm vector."""
    if a.dim != b.dim:
        raise DomainError(f"dimension mismatch: {a.dim} vs {b.dim}")
    dot = math.fsum(x * y for x, y in zip(a.values, b.values))
    na = math.sqrt(math.fsum(x * x for x in a.values))
    nb = math.sqrt(math.fsum(y * y for y in b.values))
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity undefined for a zero-norm vector")
    return dot / (na * nb)


def retrieve_criteria(
    user_content: str, corpus: CriteriaCorpus, provider: EmbeddingProvider
) -> RetrievalResult:
    """Select the corpus document with the highest cosine similarity to the
    user content; ties break to the lowest document index."""
    if not user_content.strip():
        raise DomainError("user content must be non-empty")
    query = provider.embed(user_content)
    best_index = -1
    best_score = -math.inf
    best_doc: CriteriaDocument | None = None
    for doc in corpus.documents:
        score = cosine_similarity(query, provider.embed(doc.text))
        if score > best_score:
            best_index, best_score, best_doc = doc.index, score, doc
    assert best_doc is not None
    return RetrievalResult(index=best_index, document=best_doc, score=best_score)


def load_corpus(path: str | Path) -> CriteriaCorpus:
    """Load a criteria corpus from JSONL: one {"subtype_name", "text"} per line.

    Documents keep file order with indices 0..N-1. A duplicated subtype_name
    is accepted with a warning.
    """
    p = Path(path)
    if not p.exists():
        raise DomainError(f"corpus file not found: {p}")
    documents: list[CriteriaDocument] = []
    seen: set[str] = set()
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DomainError(f"{p}:{lineno}: malformed corpus record: {exc}") from exc
        if "subtype_name" not in obj or "text" not in obj:
            raise DomainError(f"{p}:{lineno}: corpus record needs subtype_name and text")
        name = obj["subtype_name"]
        if name in seen:
            logger.warning("corpus %s: duplicate subtype_name %r at line %d", p, name, lineno)
        seen.add(name)
        documents.append(CriteriaDocument(index=len(documents), subtype_name=name, text=obj["text"]))
    if not documents:
        raise DomainError(f"corpus file {p} contains no documents")
    return CriteriaCorpus(documents=tuple(documents), source_id=str(p))
