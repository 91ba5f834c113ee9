"""Small differentiable softmax classifiers on flat parameter vectors.

Two kinds: a linear (multinomial logistic) model and a one-hidden-layer
rectifier MLP.  Gradients are exact per-sample cross-entropy gradients of
the raw loss; a descent step is params - lr * grad.  A vectorized batch
path computes the per-sample gradient sum in one pass and is linearity-
equivalent to summing single-sample gradients.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import Dataset
from .rng import RandomStream


@dataclass(frozen=True)
class ModelSpec:
    kind: str  # "linear" | "mlp"
    dim: int
    classes: int
    hidden: Optional[int] = None
    init_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"unknown model kind: {self.kind!r}")
        if self.dim < 1 or self.classes < 2:
            raise ValueError("need dim >= 1 and classes >= 2")
        if self.kind == "mlp" and (self.hidden is None or self.hidden < 1):
            raise ValueError("mlp requires hidden >= 1")

    def segments(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        """Named (segment, shape) layout of the flat parameter vector."""
        if self.kind == "linear":
            return (("w", (self.classes, self.dim)), ("b", (self.classes,)))
        return (
            ("w1", (self.hidden, self.dim)),
            ("b1", (self.hidden,)),
            ("w2", (self.classes, self.hidden)),
            ("b2", (self.classes,)),
        )

    def size(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.segments())


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 parameter vector plus the ModelSpec describing its layout."""

    values: np.ndarray
    spec: ModelSpec

    def __post_init__(self) -> None:
        if self.values.shape != (self.spec.size(),):
            raise ValueError(
                f"parameter length {self.values.shape} does not match spec size {self.spec.size()}"
            )

    def segment(self, name: str) -> np.ndarray:
        offset = 0
        for seg, shape in self.spec.segments():
            count = int(np.prod(shape))
            if seg == name:
                return self.values[offset : offset + count].reshape(shape)
            offset += count
        raise KeyError(name)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return replace(self, values=values)

    def copy(self) -> "ParamVector":
        return self.with_values(self.values.copy())

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())


def zeros_like(spec: ModelSpec) -> ParamVector:
    return ParamVector(np.zeros(spec.size()), spec)


def init_params(spec: ModelSpec, stream: RandomStream) -> ParamVector:
    """Weights ~ N(0, init_scale^2 / fan_in), biases zero."""
    chunks = []
    for name, shape in spec.segments():
        if name.startswith("b"):
            chunks.append(np.zeros(int(np.prod(shape))))
        else:
            fan_in = shape[1]
            std = spec.init_scale / np.sqrt(fan_in)
            chunks.append(std * stream.standard_normals(int(np.prod(shape))))
    return ParamVector(np.concatenate(chunks), spec)


def _forward(params: ParamVector, X: np.ndarray) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Logits (B, L) and, for the MLP, hidden pre-activations (B, hidden)."""
    spec = params.spec
    if spec.kind == "linear":
        return X @ params.segment("w").T + params.segment("b"), None
    z1 = X @ params.segment("w1").T + params.segment("b1")
    h = np.maximum(z1, 0.0)
    return h @ params.segment("w2").T + params.segment("b2"), z1


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def grad_batch(params: ParamVector, X: np.ndarray, y: np.ndarray) -> tuple[float, ParamVector]:
    """Summed cross-entropy loss and summed per-sample gradient over a batch."""
    spec = params.spec
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    logits, z1 = _forward(params, X)
    logp = _log_softmax(logits)
    rows = np.arange(X.shape[0])
    loss = float(-logp[rows, y].sum())
    if not np.isfinite(loss):
        raise RuntimeError("non-finite loss in gradient computation")

    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1.0
    if spec.kind == "linear":
        flat = np.concatenate([(dlogits.T @ X).ravel(), dlogits.sum(axis=0)])
        return loss, ParamVector(flat, spec)
    h = np.maximum(z1, 0.0)
    gw2 = dlogits.T @ h
    gb2 = dlogits.sum(axis=0)
    dz1 = (dlogits @ params.segment("w2")) * (z1 > 0)
    gw1 = dz1.T @ X
    gb1 = dz1.sum(axis=0)
    flat = np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])
    return loss, ParamVector(flat, spec)


def loss_and_grad(params: ParamVector, x: np.ndarray, y: int) -> tuple[float, ParamVector]:
    """Cross-entropy loss and its exact gradient for a single sample."""
    return grad_batch(params, np.asarray(x, dtype=np.float64).reshape(1, -1), [y])


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    macro_f1: float
    mean_loss: float


def evaluate(params: ParamVector, ds: Dataset) -> EvalResult:
    """Argmax accuracy, macro-F1 (absent class counts as F1 = 0), mean loss."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits, _ = _forward(params, ds.features)
    logp = _log_softmax(logits)
    preds = logits.argmax(axis=1)
    truth = ds.labels
    accuracy = float((preds == truth).mean())
    mean_loss = float(-logp[np.arange(len(ds)), truth].mean())

    f1s = []
    for c in range(params.spec.classes):
        tp = int(((preds == c) & (truth == c)).sum())
        fp = int(((preds == c) & (truth != c)).sum())
        fn = int(((preds != c) & (truth == c)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return EvalResult(accuracy, float(np.mean(f1s)), mean_loss)


# -- checkpoint format -------------------------------------------------
#
# A checkpoint is a one-line JSON header (model spec + value count) followed
# by the raw little-endian float64 parameter values.

_MAGIC = b"FSPV1\n"


def save_params(params: ParamVector, path: str) -> None:
    spec = params.spec
    header = {
        "kind": spec.kind,
        "dim": spec.dim,
        "classes": spec.classes,
        "hidden": spec.hidden,
        "init_scale": spec.init_scale,
        "count": int(params.values.size),
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(struct.pack(f"<{params.values.size}d", *params.values))


def load_params(path: str) -> ParamVector:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"not a parameter checkpoint: {path}")
        header = json.loads(fh.readline().decode("utf-8"))
        spec = ModelSpec(
            kind=header["kind"],
            dim=header["dim"],
            classes=header["classes"],
            hidden=header["hidden"],
            init_scale=header["init_scale"],
        )
        raw = fh.read(8 * header["count"])
        values = np.array(struct.unpack(f"<{header['count']}d", raw))
    return ParamVector(values, spec)
