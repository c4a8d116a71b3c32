"""Pluggable text encoders: an HTTP service client with retry, an optional
local sentence-transformers model, and a deterministic hashing encoder for
offline smoke tests."""

from __future__ import annotations

import hashlib
import time

import numpy as np
import requests

TRANSIENT_STATUS = {429, 500, 502, 503, 504}
MAX_ATTEMPTS = 3
BACKOFF_BASE_S = 0.5


class EncoderError(RuntimeError):
    pass


class HttpEncoder:
    """POSTs {"texts": [...], "pooling": "..."} and expects
    {"embeddings": [[...], ...]} back. Transient failures retry with
    exponential backoff up to three attempts per batch."""

    def __init__(self, url: str, pooling: str = "mean", timeout_s: float = 30.0,
                 session=None, sleep=time.sleep):
        self.url = url
        self.pooling = pooling
        self.timeout_s = timeout_s
        self.session = session or requests.Session()
        self.sleep = sleep

    def encode(self, texts: list[str]) -> np.ndarray:
        last_error = None
        for attempt in range(MAX_ATTEMPTS):
            if attempt:
                self.sleep(BACKOFF_BASE_S * (2 ** (attempt - 1)))
            try:
                resp = self.session.post(
                    self.url, json={"texts": texts, "pooling": self.pooling},
                    timeout=self.timeout_s)
            except requests.RequestException as e:
                last_error = e
                continue
            if resp.status_code in TRANSIENT_STATUS:
                last_error = EncoderError(f"encoder returned {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise EncoderError(f"encoder returned {resp.status_code}: "
                                   f"{resp.text[:200]}")
            payload = resp.json()
            vecs = payload.get("embeddings")
            if not isinstance(vecs, list) or len(vecs) != len(texts):
                raise EncoderError(
                    f"encoder returned {len(vecs) if isinstance(vecs, list) else 'no'}"
                    f" embeddings for {len(texts)} texts")
            return np.asarray(vecs, dtype=np.float32)
        raise EncoderError(f"encoder unreachable after {MAX_ATTEMPTS} attempts: "
                           f"{last_error}")


class LocalEncoder:
    """sentence-transformers model in eval mode; deterministic per weights."""

    def __init__(self, model_id: str, pooling: str = "mean"):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as e:
            raise EncoderError(
                "sentence-transformers is not installed; install the 'local' "
                "extra or point --encoder at an HTTP service") from e
        # pooling is baked into most sentence-transformer heads; the flag is
        # recorded so runs stay comparable across encoder backends
        self.pooling = pooling
        self.model = SentenceTransformer(model_id)

    def encode(self, texts: list[str]) -> np.ndarray:
        return np.asarray(self.model.encode(texts, show_progress_bar=False),
                          dtype=np.float32)


class HashEncoder:
    """Deterministic hashed bag-of-words encoder; no network, no weights.

    Exists so export pipelines can be exercised end to end offline.
    """

    BUCKETS = 2048

    def __init__(self, dim: int, pooling: str = "mean", seed: int = 0):
        self.dim = dim
        self.pooling = pooling
        self.proj = np.random.default_rng(seed).standard_normal(
            (self.BUCKETS, dim)).astype(np.float32)

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            bow = np.zeros(self.BUCKETS, dtype=np.float32)
            tokens = text.lower().split()
            for tok in tokens:
                digest = hashlib.sha1(tok.encode("utf-8")).digest()
                bow[int.from_bytes(digest[:4], "little") % self.BUCKETS] += 1.0
            if self.pooling == "mean" and tokens:
                bow /= len(tokens)
            vec = bow @ self.proj
            norm = np.linalg.norm(vec)
            out[i] = vec / norm if norm > 0 else vec
        return out


def make_encoder(spec: str, dim: int, pooling: str):
    if spec.startswith(("http://", "https://")):
        return HttpEncoder(spec, pooling=pooling)
    if spec == "hash":
        return HashEncoder(dim, pooling=pooling)
    return LocalEncoder(spec, pooling=pooling)
