"""Participant-selection strategies.

Four ways to decide which data trains in a round: per-sample Bernoulli
selection at rate K/estimate (data-level uniform), uniform client choice,
size-weighted client choice, and per-sample selection at a fixed ratio.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .rng import RandomStream

STRATEGIES = ("fedsampling", "uniform_client", "weighted_client", "fixed_ratio")


@dataclass(frozen=True)
class SamplingPlan:
    """One strategy plus exactly its own parameters.

    fedsampling: K (desired samples per round).
    uniform_client / weighted_client: m (clients per round) plus the local
    training knobs local_epochs, batch_size (None = full batch), local_lr.
    fixed_ratio: r in (0, 1].
    """

    strategy: str
    K: Optional[int] = None
    m: Optional[int] = None
    r: Optional[float] = None
    local_epochs: int = 1
    batch_size: Optional[int] = None
    local_lr: float = 1.0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy: {self.strategy!r}")
        if self.strategy == "fedsampling":
            if self.K is None or self.K < 1:
                raise ValueError("fedsampling requires K >= 1")
            if self.m is not None or self.r is not None:
                raise ValueError("fedsampling takes only K")
        elif self.strategy in ("uniform_client", "weighted_client"):
            if self.m is None or self.m < 1:
                raise ValueError(f"{self.strategy} requires m >= 1")
            if self.K is not None or self.r is not None:
                raise ValueError(f"{self.strategy} takes only m and local knobs")
            if self.local_epochs < 1:
                raise ValueError("local_epochs must be >= 1")
            if self.batch_size is not None and self.batch_size < 1:
                raise ValueError("batch_size must be >= 1 or None for full batch")
            if self.local_lr <= 0:
                raise ValueError("local_lr must be positive")
        else:  # fixed_ratio
            if self.r is None or not 0.0 < self.r <= 1.0:
                raise ValueError("fixed_ratio requires r in (0, 1]")
            if self.K is not None or self.m is not None:
                raise ValueError("fixed_ratio takes only r")


@dataclass
class SelectionResult:
    """Round-level selection: per-client local sample indices."""

    per_client: list[np.ndarray]
    effective_count: int

    @classmethod
    def from_lists(cls, per_client: list[np.ndarray]) -> "SelectionResult":
        return cls(per_client, sum(int(sel.size) for sel in per_client))


def fedsampling_probability(K: int, n_estimate: float) -> float:
    """Per-sample selection probability: K/estimate clamped into [0, 1].

    The estimate is floored at 1 first, so a non-positive estimate degrades
    to full selection (p = 1) rather than an undefined rate.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    return min(max(K / max(n_estimate, 1.0), 0.0), 1.0)


def fedsampling_select(
    client_size: int, K: int, n_estimate: float, stream: RandomStream
) -> np.ndarray:
    """Independently keep each local sample with probability K/estimate."""
    if client_size < 0:
        raise ValueError("client_size must be non-negative")
    p = fedsampling_probability(K, n_estimate)
    mask = stream.bernoulli_array(p, client_size)
    return np.flatnonzero(mask)


def uniform_client_select(clients: int, m: int, stream: RandomStream) -> np.ndarray:
    """m distinct clients, uniformly without replacement (partial shuffle)."""
    if not 1 <= m <= clients:
        raise ValueError(f"need 1 <= m <= clients, got m={m} clients={clients}")
    pool = np.arange(clients, dtype=np.int64)
    for i in range(m):
        j = stream.uniform_int(i, clients - 1)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:m].copy()


def weighted_client_select(
    sizes: Sequence[int], m: int, stream: RandomStream
) -> np.ndarray:
    """m distinct clients, probability proportional to size, sequentially
    renormalizing after each draw."""
    weights = np.asarray(sizes, dtype=np.float64)
    if m < 1:
        raise ValueError("m must be >= 1")
    if (weights < 0).any():
        raise ValueError("sizes must be non-negative")
    if int((weights > 0).sum()) < m:
        raise ValueError(f"need at least {m} clients with positive size")
    chosen = np.empty(m, dtype=np.int64)
    w = weights.copy()
    for i in range(m):
        cum = np.cumsum(w)
        t = stream.uniform_unit() * cum[-1]
        idx = int(np.searchsorted(cum, t, side="right"))
        idx = min(idx, len(w) - 1)
        chosen[i] = idx
        w[idx] = 0.0
    return chosen


def fixed_ratio_select(client_size: int, r: float, stream: RandomStream) -> np.ndarray:
    """Independently keep each local sample with fixed probability r."""
    if not 0.0 < r <= 1.0:
        raise ValueError(f"r must be in (0, 1], got {r}")
    if client_size < 0:
        raise ValueError("client_size must be non-negative")
    mask = stream.bernoulli_array(r, client_size)
    return np.flatnonzero(mask)
