"""Deterministic, hierarchically keyed random streams.

Every stochastic draw in the simulator comes from a stream derived from a
(seed, path) pair, where the path is an ordered list of (label, index)
hops such as [("round", 3), ("client", 17)].  The path is hashed into a
Philox key, so streams for distinct paths are statistically independent
and never couple through draw order: a client's randomness does not depend
on how many draws some other client made first.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PathEntry = tuple[str, int]

_U64_MAX = 0xFFFFFFFFFFFFFFFF


def _normalize_path(path: Iterable[PathEntry]) -> tuple[PathEntry, ...]:
    entries = []
    for entry in path:
        label, index = entry
        if not isinstance(label, str) or not label:
            raise ValueError(f"path label must be a non-empty string, got {label!r}")
        index = int(index)
        if not 0 <= index <= _U64_MAX:
            raise ValueError(f"path index out of 64-bit range: {index}")
        entries.append((label, index))
    if not entries:
        raise ValueError("key path must be non-empty")
    return tuple(entries)


@dataclass(frozen=True)
class StreamKey:
    """Master seed plus the hop path identifying one random stream."""

    seed: int
    path: tuple[PathEntry, ...]

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) <= _U64_MAX:
            raise ValueError(f"seed out of 64-bit range: {self.seed}")
        object.__setattr__(self, "path", _normalize_path(self.path))

    def digest(self) -> bytes:
        """256-bit digest of the canonical (seed, path) encoding."""
        h = hashlib.sha256()
        h.update(struct.pack("<Q", self.seed))
        for label, index in self.path:
            raw = label.encode("utf-8")
            h.update(struct.pack("<I", len(raw)))
            h.update(raw)
            h.update(struct.pack("<Q", index))
        return h.digest()


class RandomStream:
    """Single-consumer stream of draws backed by a counter-based generator.

    Use one stream per logical consumer; derive fresh streams (distinct
    paths) for work that may run concurrently.
    """

    def __init__(self, key: StreamKey):
        self.key = key
        philox_key = int.from_bytes(key.digest()[:16], "little")
        self._gen = np.random.Generator(np.random.Philox(key=philox_key))

    # -- scalar draws --------------------------------------------------

    def uniform_unit(self) -> float:
        """One double in [0, 1)."""
        return float(self._gen.random())

    def uniform_int(self, lo: int, hi: int) -> int:
        """Uniform integer on [lo, hi], both ends inclusive.

        Bit-masked rejection sampling on raw 64-bit words, so the result
        is exactly uniform (no modulo bias).
        """
        if lo > hi:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        span = hi - lo + 1
        mask = (1 << (span - 1).bit_length()) - 1 if span > 1 else 0
        while True:
            word = int(self._gen.integers(0, _U64_MAX, dtype=np.uint64, endpoint=True))
            r = word & mask
            if r < span:
                return lo + r

    def bernoulli(self, p: float) -> bool:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"bernoulli probability out of [0, 1]: {p}")
        return bool(self._gen.random() < p)

    def standard_normal(self) -> float:
        return float(self._gen.standard_normal())

    # -- vectorized draws (same distributions, bulk) --------------------

    def uniform_units(self, n: int) -> np.ndarray:
        return self._gen.random(int(n))

    def uniform_ints(self, lo: int, hi: int, n: int) -> np.ndarray:
        """n independent uniform integers on [lo, hi], rejection-sampled."""
        if lo > hi:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        n = int(n)
        span = hi - lo + 1
        mask = (1 << (span - 1).bit_length()) - 1 if span > 1 else 0
        out = np.empty(n, dtype=np.int64)
        filled = 0
        while filled < n:
            need = n - filled
            # acceptance rate is >= 1/2, so a 2.2x batch almost always suffices
            batch = int(need * 2.2) + 8
            words = self._gen.integers(0, _U64_MAX, size=batch, dtype=np.uint64, endpoint=True)
            cand = (words & np.uint64(mask)).astype(np.int64)
            good = cand[cand < span][:need]
            out[filled : filled + good.size] = lo + good
            filled += good.size
        return out

    def bernoulli_array(self, p: float, n: int) -> np.ndarray:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"bernoulli probability out of [0, 1]: {p}")
        return self._gen.random(int(n)) < p

    def standard_normals(self, shape: int | Sequence[int]) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(int(n))


def derive(seed: int, path: Iterable[PathEntry]) -> RandomStream:
    """Derive the stream for (seed, path); identical inputs replay identically."""
    return RandomStream(StreamKey(int(seed), tuple(path)))
