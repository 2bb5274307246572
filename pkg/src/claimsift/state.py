"""Embedding providers and selector state assembly.

The selector state for an instance is the concatenation of three equal-width
vectors: the claim embedding, the running mean of retained-context
embeddings, and the embedding of the annotator's explanation.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass

import numpy as np
import requests

from .errors import ConfigError, EmbedError, StateError
from .labels import STANCE_NAMES, VERACITY_NAMES


@dataclass
class EmbedConfig:
    kind: str = "hashed"  # "hashed" or "service"
    endpoint: str | None = None
    timeout: float = 10.0

    def validate(self, prefix: str = "embed_backend") -> None:
        if self.kind not in ("hashed", "service"):
            raise ConfigError(f"{prefix}.kind: must be 'hashed' or 'service'")
        if self.kind == "service" and not self.endpoint:
            raise ConfigError(f"{prefix}.endpoint: required when kind is 'service'")
        if self.timeout <= 0:
            raise ConfigError(f"{prefix}.timeout: must be > 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "endpoint": self.endpoint, "timeout": self.timeout}

    @staticmethod
    def from_dict(raw: dict, prefix: str = "embed_backend") -> "EmbedConfig":
        unknown = set(raw) - set(EmbedConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"{prefix}: unknown keys {sorted(unknown)}")
        return EmbedConfig(**raw)


class HashedEmbedder:
    """Deterministic bag-of-words embedding into d crc32 hash buckets.

    Tokens are lowercase whitespace splits; bucket counts are L2-normalized.
    Empty text maps to the zero vector. crc32 rather than hash() so vectors
    are identical across processes and runs.
    """

    def __init__(self, d: int):
        if d < 1:
            raise ConfigError("embed_dim: must be >= 1")
        self.d = d

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.d, dtype=np.float64)
        for token in text.lower().split():
            vec[zlib.crc32(token.encode("utf-8")) % self.d] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec


class ServiceEmbedder:
    """HTTP embedding provider: POST {endpoint}/embed with {"text": ...}."""

    def __init__(self, endpoint: str, d: int, timeout: float = 10.0,
                 session: requests.Session | None = None):
        if d < 1:
            raise ConfigError("embed_dim: must be >= 1")
        if not endpoint:
            raise ConfigError("embed_backend.endpoint: required")
        self.endpoint = endpoint
        self.d = d
        self.timeout = timeout
        self._session = session or requests.Session()

    def embed(self, text: str) -> np.ndarray:
        url = self.endpoint.rstrip("/") + "/embed"
        last_error: Exception | None = None
        for attempt in range(3):
            if attempt:
                time.sleep(0.05 * attempt)
            try:
                resp = self._session.post(
                    url, json={"text": text}, timeout=self.timeout
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = EmbedError(f"{url} returned {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise EmbedError(f"{url} rejected the request with {resp.status_code}")
            try:
                vector = resp.json().get("vector")
            except ValueError:
                last_error = EmbedError(f"{url} returned a non-JSON body")
                continue
            arr = np.asarray(vector, dtype=np.float64)
            if arr.shape != (self.d,) or not np.all(np.isfinite(arr)):
                raise EmbedError(
                    f"embedding service returned a malformed vector "
                    f"(expected {self.d} finite values)"
                )
            return arr
        raise EmbedError(f"{url} failed after retries: {last_error}")


def build_embedder(config: EmbedConfig, d: int):
    config.validate()
    if config.kind == "service":
        return ServiceEmbedder(config.endpoint, d, timeout=config.timeout)
    return HashedEmbedder(d)


class ContextAccumulator:
    """Running mean of retained-instance embeddings; zero vector when empty."""

    def __init__(self, d: int):
        if d < 1:
            raise StateError("context width must be >= 1")
        self.d = d
        self._sum = np.zeros(d, dtype=np.float64)
        self.count = 0

    def add(self, vector: np.ndarray) -> None:
        arr = np.asarray(vector, dtype=np.float64)
        if arr.shape != (self.d,):
            raise StateError(
                f"context vector has width {arr.shape}, expected ({self.d},)"
            )
        self._sum += arr
        self.count += 1

    def mean(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros(self.d, dtype=np.float64)
        return self._sum / self.count


def build_state(
    claim_vec: np.ndarray, context_vec: np.ndarray, explanation_vec: np.ndarray
) -> np.ndarray:
    """Concatenate the three state components, enforcing equal widths."""
    parts = []
    width = None
    for name, vec in (
        ("claim", claim_vec),
        ("context", context_vec),
        ("explanation", explanation_vec),
    ):
        arr = np.asarray(vec, dtype=np.float64)
        if arr.ndim != 1:
            raise StateError(f"{name} vector must be 1-dimensional")
        if width is None:
            width = arr.shape[0]
        elif arr.shape[0] != width:
            raise StateError(
                f"{name} vector has width {arr.shape[0]}, expected {width}"
            )
        if not np.all(np.isfinite(arr)):
            raise StateError(f"{name} vector contains non-finite values")
        parts.append(arr)
    return np.concatenate(parts)


def pack_post_text(post_text: str, stance_label: str, explanation: str) -> str:
    """Text form of a stance-annotated post, used for context embeddings."""
    return f"{post_text} {STANCE_NAMES[stance_label]} {explanation}".strip()


def pack_claim_text(claim_text: str, veracity_label: str, explanation: str) -> str:
    """Text form of a veracity-annotated claim, used for context embeddings."""
    return f"{claim_text} {VERACITY_NAMES[veracity_label]} {explanation}".strip()
