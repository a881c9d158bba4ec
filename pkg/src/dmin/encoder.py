"""Input encoders producing d-dimensional sample vectors.

Two interchangeable paths:

* :class:`FeatureHashEncoder` — lowercases text, splits on whitespace,
  hashes each token with 64-bit FNV-1a into one of ``vocab_buckets``
  count buckets, L2-normalizes the counts, and applies a learned linear
  projection followed by tanh.  The projection is the only trainable
  piece and participates in both training stages.
* :class:`PrecomputedEncoder` — looks items up in a fixed table of
  externally computed vectors (e.g. sentence embeddings written by some
  other system) and returns them as constants.

Hashing is plain arithmetic on documented constants, so bucket
assignment is identical across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import Tensor

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash (offset 14695981039346656037, prime 1099511628211)."""
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def token_bucket(token: str, buckets: int) -> int:
    return fnv1a64(token.encode("utf-8")) % buckets


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "feature_hash"  # "feature_hash" or "precomputed"
    embed_dim: int = 64
    vocab_buckets: int = 4096

    def __post_init__(self):
        if self.kind not in ("feature_hash", "precomputed"):
            raise ValueError(
                f"kind must be 'feature_hash' or 'precomputed', got "
                f"{self.kind!r}")
        if self.embed_dim < 2:
            raise ValueError(f"embed_dim must be >= 2, got {self.embed_dim}")
        if self.kind == "feature_hash" and self.vocab_buckets < self.embed_dim:
            raise ValueError(
                f"vocab_buckets ({self.vocab_buckets}) must be >= embed_dim "
                f"({self.embed_dim})")


def hash_counts(text: str, buckets: int) -> np.ndarray:
    """L2-normalized token-count vector over hash buckets."""
    if not isinstance(text, str) or not text.strip():
        raise ValueError("text must be a non-empty string")
    counts = np.zeros(buckets)
    for token in text.lower().split():
        counts[token_bucket(token, buckets)] += 1.0
    return counts / np.linalg.norm(counts)


@dataclass
class FeatureHashEncoder:
    """Trainable text encoder: hashed counts -> linear projection -> tanh."""

    config: EncoderConfig
    projection: Tensor  # (embed_dim, vocab_buckets)

    def __post_init__(self):
        expected = (self.config.embed_dim, self.config.vocab_buckets)
        if self.projection.array.shape != expected:
            raise ValueError(
                f"projection has shape {self.projection.array.shape}, "
                f"expected {expected}")

    def encode(self, item: str) -> Tensor:
        counts = hash_counts(item, self.config.vocab_buckets)
        return nm.tanh(nm.matvec(self.projection, nm.constant(counts)))


@dataclass
class PrecomputedEncoder:
    """Fixed lookup of externally computed vectors, keyed by item id."""

    config: EncoderConfig
    table: dict = field(default_factory=dict)

    def __post_init__(self):
        for key, vec in self.table.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.config.embed_dim,):
                raise ValueError(
                    f"vector for {key!r} has shape {arr.shape}, expected "
                    f"({self.config.embed_dim},)")
            self.table[key] = arr

    def encode(self, item: str) -> Tensor:
        if item not in self.table:
            raise ValueError(f"unknown item id {item!r}")
        return nm.constant(self.table[item])


def encode(encoder, item) -> Tensor:
    return encoder.encode(item)


def encode_batch(encoder, items) -> list:
    out = []
    for i, item in enumerate(items):
        try:
            out.append(encoder.encode(item))
        except ValueError as err:
            raise ValueError(f"item {i}: {err}") from err
    return out


def init_encoder_arrays(cfg: EncoderConfig, rng: np.random.Generator,
                        std: float = 0.5) -> dict:
    """Fresh trainable arrays for an encoder (empty for precomputed)."""
    if cfg.kind != "feature_hash":
        return {}
    return {"projection": rng.normal(0.0, std,
                                     (cfg.embed_dim, cfg.vocab_buckets))}
