"""Numeric kernels and shared primitives.

Logit and probability vectors are plain 1-D ``float64`` numpy arrays. Masked
logits are exact ``-inf`` and map to probability exactly 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import BadParam, EmptySupport

UNK = "<unk>"
PROB_TOL = 1e-9

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        index = {t: i for i, t in enumerate(tokens)}
        if len(index) != len(tokens):
            raise BadParam("vocabulary tokens must be unique")
        if UNK not in index:
            raise BadParam(f"vocabulary must contain {UNK!r}")
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def ids(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.id(t) for t in tokens)

    def token(self, index: int) -> str:
        if not 0 <= index < len(self.tokens):
            raise KeyError(f"token id {index} out of range for vocabulary of size {self.size}")
        return self.tokens[index]

    def decode(self, ids: Iterable[int], skip: Iterable[int] = ()) -> str:
        skip = set(skip)
        return "".join(self.tokens[i] for i in ids if i not in skip)


def as_logits(values) -> np.ndarray:
    """Validate and copy a logit vector: finite or exactly ``-inf``, never NaN."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise BadParam(f"logit vector must be 1-D, got shape {arr.shape}")
    if np.isnan(arr).any() or np.isposinf(arr).any():
        raise BadParam("logit vector contains NaN or +inf")
    if not np.isfinite(arr).any():
        raise EmptySupport("logit vector has no finite entry")
    return arr


def as_probs(values, tol: float = PROB_TOL) -> np.ndarray:
    """Validate a probability vector (non-negative, unit sum within ``tol``)."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise BadParam(f"probability vector must be non-empty 1-D, got shape {arr.shape}")
    if not np.isfinite(arr).all() or (arr < 0).any():
        raise BadParam("probability vector has negative or non-finite entries")
    total = float(arr.sum())
    if abs(total - 1.0) > tol:
        raise BadParam(f"probability vector sums to {total!r}")
    return arr


def _shifted(l: np.ndarray) -> np.ndarray:
    l = np.asarray(l, dtype=np.float64)
    finite = np.isfinite(l)
    if not finite.any():
        raise EmptySupport("softmax over an all-masked vector")
    return l - l[finite].max()


def softmax(l) -> np.ndarray:
    z = _shifted(l)
    e = np.exp(z)  # exp(-inf) == 0 exactly
    return e / e.sum()


def log_softmax(l) -> np.ndarray:
    z = _shifted(l)
    return z - np.log(np.exp(z).sum())


def argmax(values) -> int:
    """Index of the maximum; ties go to the lowest index."""
    return int(np.argmax(np.asarray(values)))


def fnv1a64(data: bytes, state: int = FNV_OFFSET) -> int:
    h = state
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


def fnv1a64_fan(state: int, tails: np.ndarray) -> np.ndarray:
    """Continue an FNV-1a state over many byte strings of equal length at once.

    ``tails`` is a ``(n, m)`` uint8 array; returns ``n`` uint64 hashes, the same
    as ``fnv1a64(row.tobytes(), state)`` for every row.
    """
    h = np.full(tails.shape[0], state, dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    with np.errstate(over="ignore"):
        for j in range(tails.shape[1]):
            h ^= tails[:, j].astype(np.uint64)
            h *= prime
    return h


def hash_to_unit(h) -> np.ndarray | float:
    """Map 64-bit hashes to [-1, 1] via their top 53 bits."""
    top = np.asarray(h, dtype=np.uint64) >> np.uint64(11)
    out = top.astype(np.float64) * (2.0 / 2.0**53) - 1.0
    return float(out) if np.ndim(out) == 0 else out


def u64(x: int) -> bytes:
    return struct.pack("<Q", x & _MASK64)


def derive_seed(seed: int, key: str) -> int:
    """64-bit seed derived from a global seed and a string key (FNV-1a)."""
    return fnv1a64(u64(seed) + key.encode("utf-8"))


class SeededRng:
    """Per-task random stream.

    Backed by numpy's PCG64, seeded through ``SeedSequence(seed, spawn_key)``;
    the spawn key carries the sub-stream coordinates, so the stream for
    ``(seed, sample_id, config_index)`` never depends on iteration order.
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        if seed < 0:
            raise BadParam("seed must be a non-negative 64-bit integer")
        self.seed = seed & _MASK64
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @classmethod
    def substream(cls, seed: int, sample_id: str, config_index: int) -> "SeededRng":
        return cls(seed, (fnv1a64(sample_id.encode("utf-8")), config_index))

    def uniform(self) -> float:
        return float(self._gen.random())

    def generator(self) -> np.random.Generator:
        return self._gen
