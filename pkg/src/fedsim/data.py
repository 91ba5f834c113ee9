"""Synthetic classification datasets and client partitioning.

Datasets are Gaussian mixtures (one component per class) standing in for
the real corpora at desk scale.  Partitioners split one dataset across
simulated clients in three regimes: long-tail log-normal sizes, label-sorted
shards (non-IID), and IID round-robin.  Every partitioner returns a true
partition: client index sets are disjoint and their union is the input.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rng import RandomStream


@dataclass
class Dataset:
    """Feature matrix (n, d) with integer class labels (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be 1-D and match the feature rows")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class ClientDataset:
    """One client's private shard, with sample identities kept for testing.

    The shard's size is privacy-sensitive: simulator code playing the server
    role must never read it, only the size-query machinery may.
    """

    client_id: int
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def size(self) -> int:
        return self.indices.shape[0]


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset across clients.

    scheme "lognormal" needs clients + sigma (and optionally mean_size, which
    is validated against n/clients rather than resampled); "label_shards"
    needs shard_size; "iid" needs clients.
    """

    scheme: str
    clients: Optional[int] = None
    sigma: Optional[float] = None
    mean_size: Optional[float] = None
    shard_size: Optional[int] = None

    def __post_init__(self) -> None:
        if self.scheme in ("lognormal", "iid"):
            if self.clients is None or self.clients < 1:
                raise ValueError(f"{self.scheme} partition requires clients >= 1")
            if self.scheme == "lognormal":
                if self.sigma is None or self.sigma < 0:
                    raise ValueError("lognormal partition requires sigma >= 0")
                if self.mean_size is not None and self.mean_size <= 0:
                    raise ValueError("mean_size must be > 0")
        elif self.scheme == "label_shards":
            if self.shard_size is None or self.shard_size < 1:
                raise ValueError("label_shards partition requires shard_size >= 1")
        else:
            raise ValueError(f"unknown partition scheme: {self.scheme!r}")


def _take(ds: Dataset, client_id: int, indices: np.ndarray) -> ClientDataset:
    idx = np.asarray(indices, dtype=np.int64)
    return ClientDataset(client_id, idx, ds.features[idx], ds.labels[idx])


def make_synthetic_classification(
    n: int, d: int, classes: int, class_sep: float, stream: RandomStream
) -> Dataset:
    """Sample a balanced Gaussian-mixture classification set.

    One unit-covariance component per class; component means are random
    directions rescaled so the minimum pairwise distance equals class_sep.
    Label counts are balanced up to rounding and the row order is shuffled.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if d < 1 or classes < 2:
        raise ValueError("need d >= 1 and classes >= 2")
    means = stream.standard_normals((classes, d))
    dists = [
        float(np.linalg.norm(means[i] - means[j]))
        for i in range(classes)
        for j in range(i + 1, classes)
    ]
    closest = min(dists)
    if closest <= 0:
        raise RuntimeError("degenerate component means")
    means *= class_sep / closest

    counts = np.full(classes, n // classes, dtype=np.int64)
    counts[: n % classes] += 1
    labels = np.repeat(np.arange(classes, dtype=np.int64), counts)
    features = means[labels] + stream.standard_normals((n, d))
    order = stream.permutation(n)
    return Dataset(features[order], labels[order])


def partition_lognormal(
    ds: Dataset,
    clients: int,
    sigma: float,
    stream: RandomStream,
    mean_size: Optional[float] = None,
) -> list[ClientDataset]:
    """Split by normalized log-normal weights; total allocation is exact.

    Per-client quota is n * w_c / sum(w) with w_c = exp(N(0, sigma^2)); whole
    parts are assigned directly and the remainder goes to clients in
    descending fractional-part order (ties by client id).  mean_size, when
    given, is validated against n/clients instead of resampling sizes.
    """
    if clients < 1:
        raise ValueError("clients must be >= 1")
    n = len(ds)
    if n == 0:
        raise ValueError("cannot partition an empty dataset")
    if mean_size is not None and abs(n / clients - mean_size) > 1e-9:
        raise ValueError(
            f"mean_size {mean_size} inconsistent with n/clients = {n / clients}"
        )
    weights = np.exp(sigma * stream.standard_normals(clients))
    quotas = n * weights / weights.sum()
    sizes = np.floor(quotas).astype(np.int64)
    remainder = n - int(sizes.sum())
    if remainder:
        frac = quotas - np.floor(quotas)
        topped = np.lexsort((np.arange(clients), -frac))[:remainder]
        sizes[topped] += 1
    order = stream.permutation(n)
    bounds = np.concatenate(([0], np.cumsum(sizes)))
    return [_take(ds, c, order[bounds[c] : bounds[c + 1]]) for c in range(clients)]


def partition_label_shards(ds: Dataset, shard_size: int) -> list[ClientDataset]:
    """Stable-sort by label and cut consecutive shards of shard_size.

    The last shard may be smaller.  Output is invariant to input row order
    up to sample identity: ties in the sort are broken by original index.
    """
    if shard_size < 1:
        raise ValueError("shard_size must be >= 1")
    n = len(ds)
    by_label = np.argsort(ds.labels, kind="stable")
    return [
        _take(ds, c, by_label[start : start + shard_size])
        for c, start in enumerate(range(0, n, shard_size))
    ]


def partition_iid(ds: Dataset, clients: int, stream: RandomStream) -> list[ClientDataset]:
    """Shuffle and deal round-robin; client sizes differ by at most one."""
    if clients < 1:
        raise ValueError("clients must be >= 1")
    order = stream.permutation(len(ds))
    return [_take(ds, c, order[c::clients]) for c in range(clients)]


def partition(ds: Dataset, spec: PartitionSpec, stream: RandomStream) -> list[ClientDataset]:
    if spec.scheme == "lognormal":
        return partition_lognormal(ds, spec.clients, spec.sigma, stream, spec.mean_size)
    if spec.scheme == "label_shards":
        return partition_label_shards(ds, spec.shard_size)
    return partition_iid(ds, spec.clients, stream)


def save_csv(ds: Dataset, path: str) -> None:
    """Write the dataset as CSV: columns x0..x{d-1} (floats), label (int)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(ds.dim)] + ["label"])
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path: str) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 1
        feats, labels = [], []
        for row in reader:
            feats.append([float(v) for v in row[:d]])
            labels.append(int(row[d]))
    return Dataset(np.asarray(feats, dtype=np.float64), np.asarray(labels, dtype=np.int64))
