"""Deterministic text features via signed feature hashing.

Word 1-3 grams are hashed with BLAKE2b (stable across processes and
platforms, unlike ``hash()``) into ``dim`` buckets, with a sign taken from
an independent hash bit, then L2-normalized.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from ..agents import AgentSpec, TaskItem

_TOKEN = re.compile(r"\w+", re.UNICODE)
SEPARATOR = " || "


def tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def ngrams(toks: list[str], lo: int = 1, hi: int = 3) -> list[str]:
    grams = []
    for n in range(lo, hi + 1):
        grams.extend(" ".join(toks[i : i + n]) for i in range(len(toks) - n + 1))
    return grams


def _bucket(gram: str, salt: str, dim: int) -> tuple[int, float]:
    h = int.from_bytes(hashlib.blake2b((salt + "\x00" + gram).encode("utf-8"), digest_size=8).digest(), "little")
    return (h >> 1) % dim, (1.0 if h & 1 else -1.0)


def encode_text(text: str, dim: int, salt: str = "") -> np.ndarray:
    """Unit-norm hashed n-gram vector; the zero vector for text without tokens."""
    if dim < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {dim}")
    vec = np.zeros(dim)
    for gram in ngrams(tokens(text)):
        idx, sign = _bucket(gram, salt, dim)
        vec[idx] += sign
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    salt: str = "topolab"

    def text(self, text: str) -> np.ndarray:
        return encode_text(text, self.dim, self.salt)


def encode_node(spec: AgentSpec, task: TaskItem, enc: EncoderConfig) -> np.ndarray:
    return enc.text(spec.role_text + SEPARATOR + task.question)


def encode_query(task: TaskItem, enc: EncoderConfig) -> np.ndarray:
    return enc.text(task.question)


def node_features(agents, task: TaskItem, enc: EncoderConfig) -> np.ndarray:
    return np.stack([encode_node(a, task, enc) for a in agents])


def remote_embed(texts: list[str], base_url: str, api_key: str, model: str, client=None) -> np.ndarray:
    """Embeddings from an OpenAI-compatible ``/embeddings`` endpoint, L2-normalized.

    Drop-in alternative to the hashing encoder; its dimension must match the
    model's ``dim``.
    """
    import httpx

    own = client is None
    client = client or httpx.Client(timeout=60.0)
    try:
        resp = client.post(
            base_url.rstrip("/") + "/embeddings",
            json={"model": model, "input": texts},
            headers={"Authorization": f"Bearer {api_key}"},
        )
        resp.raise_for_status()
        data = sorted(resp.json()["data"], key=lambda d: d["index"])
    finally:
        if own:
            client.close()
    out = np.array([d["embedding"] for d in data], dtype=float)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    return np.divide(out, norms, out=np.zeros_like(out), where=norms > 0)
