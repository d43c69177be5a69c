"""Counter-based random streams.

Every stochastic decision in a dialogue is keyed by ``(seed, agent, round)``.
The uniform for a key is a SplitMix64 hash of the key, so an intervention on one
agent never shifts another agent's draws, and a batch of dialogues can be
simulated with plain numpy array arithmetic.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def splitmix64(x) -> np.ndarray:
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    z = np.asarray(x, dtype=np.uint64).copy()
    with np.errstate(over="ignore"):
        z += _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        z = z ^ (z >> np.uint64(31))
    return z


def stream_key(seed, agent: int, round_: int) -> np.ndarray:
    h = splitmix64(np.asarray(seed, dtype=np.uint64))
    h = splitmix64(h ^ np.uint64(agent))
    return splitmix64(h ^ np.uint64(round_))


def stream_uniform(seed, agent: int, round_: int) -> np.ndarray:
    """Uniform in [0, 1) for each seed, with 53 bits of resolution."""
    key = stream_key(seed, agent, round_)
    return (key >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary printable parts (task ids, salts, ...)."""
    text = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def as_seed(value) -> int:
    """Coerce a user-supplied seed into the unsigned 64-bit range."""
    return int(value) & _MASK64


def seed_block(base: int, count: int) -> np.ndarray:
    """``count`` well-mixed uint64 seeds derived from ``base``."""
    start = np.uint64(as_seed(base))
    with np.errstate(over="ignore"):
        return splitmix64(start + np.arange(count, dtype=np.uint64))
