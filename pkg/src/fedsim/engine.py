"""Round-based federated training and its baselines.

One round of the data-sampling protocol has three phases: (1) every client
answers the randomized size query and the server turns the response sum into
a total-size estimate; (2) the server broadcasts (params, K, estimate) and
each client trains on a Bernoulli(K/estimate) sample of its data, uploading
a (1/K)-normalized descent delta; (3) the server adds eta times the summed
deltas.  Client-level baselines (uniform / size-weighted selection with
local SGD) and the fixed-ratio method share the same server loop shape, and
a centralized oracle mirrors phase 2 on the pooled dataset.

Client work inside a round is pure in (broadcast, local data, derived
stream) and is evaluated vectorized across clients in client-major order;
replaying a seed replays every round bit-identically.

The server role only ever sees SizeReport values and UpdateUpload deltas;
true sizes, per-client selection counts, and truthfulness flags stay on the
simulator side of the boundary (RoundLog carries them for diagnostics).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .data import ClientDataset, Dataset
from .ldp import LdpConfig, clip_size, estimate_total, randomize_response, randomize_responses
from .model import ModelSpec, ParamVector, evaluate, grad_batch, init_params
from .rng import RandomStream, derive
from .sampling import (
    SamplingPlan,
    fedsampling_probability,
    uniform_client_select,
    weighted_client_select,
)

# -- server-visible wire records ----------------------------------------


@dataclass(frozen=True)
class SizeReport:
    """What a client answers to the size query.  Deliberately value-only."""

    value: int


@dataclass(frozen=True)
class UpdateUpload:
    """What a client uploads after local training.  Deliberately delta-only."""

    delta: np.ndarray


@dataclass(frozen=True)
class RoundPlan:
    """Broadcast payload for one round, identical for every client."""

    params_snapshot: ParamVector
    K: int
    n_estimate: float


@dataclass
class RoundLog:
    """Simulator-side record of one round.  n_true and truthful_responses are
    ground truth the server never sees."""

    round: int
    effective_samples: int
    train_loss: Optional[float]
    n_estimate: Optional[float] = None
    n_true: Optional[int] = None
    truthful_responses: Optional[int] = None


@dataclass
class MetricsRecord:
    round: int
    accuracy: float
    macro_f1: float
    eval_loss: float
    train_loss: Optional[float]
    effective_samples: int
    n_estimate: Optional[float] = None
    n_true: Optional[int] = None
    truthful_responses: Optional[int] = None

    def as_dict(self) -> dict:
        return {
            "round": self.round,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "eval_loss": self.eval_loss,
            "train_loss": self.train_loss,
            "effective_samples": self.effective_samples,
            "n_estimate": self.n_estimate,
            "n_true": self.n_true,
            "truthful_responses": self.truthful_responses,
        }


@dataclass
class ServerState:
    params: ParamVector
    round: int
    eta: float
    ldp: Optional[LdpConfig] = None
    plan: Optional[SamplingPlan] = None


class PackedClients:
    """Client-major columnar view of a partition for vectorized rounds."""

    def __init__(self, clients: Sequence[ClientDataset]):
        if not clients:
            raise ValueError("need at least one client")
        self.count = len(clients)
        self.sizes = np.array([c.size() for c in clients], dtype=np.int64)
        self.offsets = np.concatenate(([0], np.cumsum(self.sizes)))
        self.n_total = int(self.offsets[-1])
        dim = clients[0].features.shape[1]
        self.X = np.concatenate([c.features for c in clients]) if self.n_total else np.empty((0, dim))
        self.y = np.concatenate([c.labels for c in clients]) if self.n_total else np.empty(0, dtype=np.int64)

    def client_rows(self, c: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.offsets[c], self.offsets[c + 1]
        return self.X[lo:hi], self.y[lo:hi]


# -- per-client protocol pieces ------------------------------------------


def client_size_report(
    true_size: int, cfg: LdpConfig, stream: RandomStream
) -> tuple[SizeReport, bool]:
    """Phase-1 client behaviour: clip, randomize, report.

    Returns the server-visible report and, separately, the simulator-side
    truthfulness flag.
    """
    response = randomize_response(clip_size(true_size, cfg.M), cfg, stream)
    return SizeReport(response.value), response.truthful


def server_estimate(reports: Sequence[SizeReport], clients: int, cfg: LdpConfig) -> float:
    """Phase-1 server behaviour: de-bias the summed report values."""
    return estimate_total(sum(rep.value for rep in reports), clients, cfg)


def _aggregate_uploads(uploads: Sequence[UpdateUpload]) -> np.ndarray:
    """Unweighted mean of uploaded deltas, summed in upload order."""
    total = np.zeros_like(uploads[0].delta)
    for up in uploads:
        total += up.delta
    return total / len(uploads)


def _apply_step(state: ServerState, delta: np.ndarray, log: RoundLog) -> ServerState:
    new_values = state.params.values + state.eta * delta
    if not np.isfinite(new_values).all():
        raise RuntimeError(
            f"non-finite parameters after round {log.round} "
            f"(|delta|_max={np.abs(delta).max():.3e})"
        )
    return replace(state, params=state.params.with_values(new_values), round=log.round)


# -- rounds ---------------------------------------------------------------


def run_round_fedsampling(
    state: ServerState, clients: Sequence[ClientDataset], master_seed: int
) -> tuple[ServerState, RoundLog]:
    packed = clients if isinstance(clients, PackedClients) else PackedClients(clients)
    return _fedsampling_round(state, packed, master_seed)


def _fedsampling_round(
    state: ServerState, packed: PackedClients, master_seed: int
) -> tuple[ServerState, RoundLog]:
    cfg, plan = state.ldp, state.plan
    if cfg is None or plan is None or plan.K is None:
        raise ValueError("fedsampling round needs an LDP config and a plan with K")
    t = state.round + 1
    K = plan.K

    # phase 1: size query (one truth coin + one fake draw per client, client order)
    resp_stream = derive(master_seed, [("round", t), ("phase", 0)])
    clipped = np.minimum(packed.sizes, cfg.M - 1)
    values, truthful = randomize_responses(clipped, cfg, resp_stream)
    n_estimate = estimate_total(int(values.sum()), packed.count, cfg)

    # phase 2: broadcast; per-sample Bernoulli selection at K/estimate
    broadcast = RoundPlan(state.params, K, n_estimate)
    p = fedsampling_probability(broadcast.K, broadcast.n_estimate)
    sel_stream = derive(master_seed, [("round", t), ("phase", 1)])
    mask = sel_stream.bernoulli_array(p, packed.n_total)
    selected = np.flatnonzero(mask)

    # phase 3: aggregate (1/K)-normalized descent deltas; empty selections
    # contribute exactly zero, so the big-batch sum equals the client sum
    if selected.size:
        loss_sum, gsum = grad_batch(
            broadcast.params_snapshot, packed.X[selected], packed.y[selected]
        )
        delta = -(1.0 / K) * gsum.values
        train_loss = loss_sum / selected.size
    else:
        delta = np.zeros_like(state.params.values)
        train_loss = None

    log = RoundLog(
        round=t,
        effective_samples=int(selected.size),
        train_loss=train_loss,
        n_estimate=n_estimate,
        n_true=packed.n_total,
        truthful_responses=int(truthful.sum()),
    )
    return _apply_step(state, delta, log), log


def run_round_client_sampling(
    state: ServerState,
    clients: Sequence[ClientDataset],
    mode: str,
    m: int,
    local_epochs: int,
    batch_size: Optional[int],
    master_seed: int,
    local_lr: float = 1.0,
) -> tuple[ServerState, RoundLog]:
    """FedAvg-style round: pick m clients, run local SGD, average deltas."""
    if mode not in ("uniform", "weighted"):
        raise ValueError(f"unknown client-sampling mode: {mode!r}")
    packed = clients if isinstance(clients, PackedClients) else PackedClients(clients)
    if m > packed.count:
        raise ValueError(f"m={m} exceeds client count {packed.count}")
    t = state.round + 1

    pick_stream = derive(master_seed, [("round", t), ("phase", 0)])
    if mode == "uniform":
        chosen = uniform_client_select(packed.count, m, pick_stream)
    else:
        # the weighted baseline is exactly the design that requires the
        # server to track local sizes; that disclosure is its point
        chosen = weighted_client_select(packed.sizes, m, pick_stream)

    uploads: list[UpdateUpload] = []
    touched = 0
    loss_sum, loss_count = 0.0, 0
    for c in chosen:
        Xc, yc = packed.client_rows(int(c))
        n_c = Xc.shape[0]
        touched += n_c
        if n_c:
            base_loss, _ = grad_batch(state.params, Xc, yc)
            loss_sum += base_loss
            loss_count += n_c
        local_stream = derive(master_seed, [("round", t), ("client", int(c))])
        w = state.params.values.copy()
        for _ in range(local_epochs):
            if n_c == 0:
                break
            if batch_size is None or batch_size >= n_c:
                batches = [np.arange(n_c)]
            else:
                order = local_stream.permutation(n_c)
                batches = [order[i : i + batch_size] for i in range(0, n_c, batch_size)]
            for rows in batches:
                _, g = grad_batch(state.params.with_values(w), Xc[rows], yc[rows])
                w = w - local_lr * g.values / rows.size
        uploads.append(UpdateUpload(w - state.params.values))

    delta = _aggregate_uploads(uploads)
    log = RoundLog(
        round=t,
        effective_samples=touched,
        train_loss=(loss_sum / loss_count) if loss_count else None,
        n_true=packed.n_total,
    )
    return _apply_step(state, delta, log), log


def run_round_fixed_ratio(
    state: ServerState, clients: Sequence[ClientDataset], r: float, master_seed: int
) -> tuple[ServerState, RoundLog]:
    """Naive method: every client samples at rate r and uploads the *mean*
    gradient over its selection; the server averages uploads unweighted.
    Clients with an empty selection sit the round out."""
    if not 0.0 < r <= 1.0:
        raise ValueError(f"r must be in (0, 1], got {r}")
    packed = clients if isinstance(clients, PackedClients) else PackedClients(clients)
    t = state.round + 1

    sel_stream = derive(master_seed, [("round", t), ("phase", 1)])
    mask = sel_stream.bernoulli_array(r, packed.n_total)
    selected = np.flatnonzero(mask)
    starts = np.searchsorted(selected, packed.offsets[:-1])
    ends = np.searchsorted(selected, packed.offsets[1:])

    uploads: list[UpdateUpload] = []
    loss_total = 0.0
    for c in range(packed.count):
        rows = selected[starts[c] : ends[c]]
        if rows.size == 0:
            continue
        loss_sum, gsum = grad_batch(state.params, packed.X[rows], packed.y[rows])
        uploads.append(UpdateUpload(-gsum.values / rows.size))
        loss_total += loss_sum

    if not uploads:
        log = RoundLog(round=t, effective_samples=0, train_loss=None, n_true=packed.n_total)
        return _apply_step(state, np.zeros_like(state.params.values), log), log

    delta = _aggregate_uploads(uploads)
    log = RoundLog(
        round=t,
        effective_samples=int(selected.size),
        train_loss=loss_total / selected.size,
        n_true=packed.n_total,
    )
    return _apply_step(state, delta, log), log


def _centralized_round(
    state: ServerState, ds: Dataset, K: int, master_seed: int
) -> tuple[ServerState, RoundLog]:
    """One oracle step: select each datum w.p. K/N, step with the
    (1/K)-normalized gradient sum.  Mirrors phase 2 exactly (same stream
    path and the same clamp rule with the estimate pinned to N)."""
    n = len(ds)
    t = state.round + 1
    p = fedsampling_probability(K, float(n))
    stream = derive(master_seed, [("round", t), ("phase", 1)])
    mask = stream.bernoulli_array(p, n)
    selected = np.flatnonzero(mask)
    if selected.size:
        loss_sum, gsum = grad_batch(state.params, ds.features[selected], ds.labels[selected])
        delta = -(1.0 / K) * gsum.values
        train_loss = loss_sum / selected.size
    else:
        delta = np.zeros_like(state.params.values)
        train_loss = None
    log = RoundLog(
        round=t,
        effective_samples=int(selected.size),
        train_loss=train_loss,
        n_true=n,
    )
    return _apply_step(state, delta, log), log


def run_centralized(
    ds: Dataset,
    model: ModelSpec,
    eta: float,
    K: int,
    rounds: int,
    master_seed: int,
    eval_ds: Optional[Dataset] = None,
    eval_every: int = 1,
) -> "TrainResult":
    """Centralized training oracle with the same per-sample selection law."""
    setup = TrainSetup(
        strategy="centralized",
        model=model,
        train_ds=ds,
        eval_ds=eval_ds if eval_ds is not None else ds,
        clients=None,
        plan=None,
        ldp=None,
        eta=eta,
        K=K,
        rounds=rounds,
        eval_every=eval_every,
        master_seed=master_seed,
    )
    return train(setup)


# -- full training loop ----------------------------------------------------


@dataclass
class TrainSetup:
    """Everything one training run needs; pure inputs, no file paths."""

    strategy: str  # fedsampling | uniform_client | weighted_client | fixed_ratio | centralized
    model: ModelSpec
    train_ds: Dataset
    eval_ds: Dataset
    clients: Optional[Sequence[ClientDataset]]
    plan: Optional[SamplingPlan]
    ldp: Optional[LdpConfig]
    eta: float
    K: int
    rounds: int
    eval_every: int
    master_seed: int


@dataclass
class TrainResult:
    records: list[MetricsRecord]
    state: ServerState


# -- server-state checkpoints ------------------------------------------------
#
# One file: a magic line, a JSON header (round, eta, ldp, plan, model spec,
# value count), then the raw little-endian float64 parameter values.

_STATE_MAGIC = b"FSST1\n"


def save_state(state: ServerState, path: str) -> None:
    spec = state.params.spec
    header = {
        "round": state.round,
        "eta": state.eta,
        "model": {
            "kind": spec.kind,
            "dim": spec.dim,
            "classes": spec.classes,
            "hidden": spec.hidden,
            "init_scale": spec.init_scale,
        },
        "ldp": None
        if state.ldp is None
        else {
            "epsilon": state.ldp.epsilon,
            "M": state.ldp.M,
            "alpha": state.ldp.alpha,
            "strict_positive_truth": state.ldp.strict_positive_truth,
        },
        "plan": None
        if state.plan is None
        else {
            "strategy": state.plan.strategy,
            "K": state.plan.K,
            "m": state.plan.m,
            "r": state.plan.r,
            "local_epochs": state.plan.local_epochs,
            "batch_size": state.plan.batch_size,
            "local_lr": state.plan.local_lr,
        },
        "count": int(state.params.values.size),
    }
    with open(path, "wb") as fh:
        fh.write(_STATE_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(struct.pack(f"<{state.params.values.size}d", *state.params.values))


def load_state(path: str) -> ServerState:
    with open(path, "rb") as fh:
        if fh.read(len(_STATE_MAGIC)) != _STATE_MAGIC:
            raise ValueError(f"not a server-state checkpoint: {path}")
        header = json.loads(fh.readline().decode("utf-8"))
        values = np.array(struct.unpack(f"<{header['count']}d", fh.read(8 * header["count"])))
    spec = ModelSpec(**header["model"])
    ldp = None if header["ldp"] is None else LdpConfig(**header["ldp"])
    plan = None
    if header["plan"] is not None:
        raw = header["plan"]
        plan = SamplingPlan(
            raw["strategy"],
            K=raw["K"],
            m=raw["m"],
            r=raw["r"],
            local_epochs=raw["local_epochs"],
            batch_size=raw["batch_size"],
            local_lr=raw["local_lr"],
        )
    return ServerState(ParamVector(values, spec), header["round"], header["eta"], ldp, plan)


def train(setup: TrainSetup) -> TrainResult:
    """Run the configured strategy for `rounds` rounds, evaluating on the
    held-out set every eval_every rounds (and always on the final round)."""
    if setup.strategy == "centralized" and setup.K > len(setup.train_ds):
        raise ValueError("centralized training requires K <= n")
    if setup.eval_every < 1:
        raise ValueError("eval_every must be >= 1")

    params = init_params(setup.model, derive(setup.master_seed, [("init", 0)]))
    state = ServerState(params, 0, setup.eta, setup.ldp, setup.plan)
    packed = None
    if setup.strategy != "centralized":
        if not setup.clients:
            raise ValueError(f"{setup.strategy} needs a client partition")
        packed = PackedClients(setup.clients)

    records: list[MetricsRecord] = []
    for t in range(1, setup.rounds + 1):
        if setup.strategy == "fedsampling":
            state, log = _fedsampling_round(state, packed, setup.master_seed)
        elif setup.strategy in ("uniform_client", "weighted_client"):
            plan = setup.plan
            state, log = run_round_client_sampling(
                state,
                packed,
                "uniform" if setup.strategy == "uniform_client" else "weighted",
                plan.m,
                plan.local_epochs,
                plan.batch_size,
                setup.master_seed,
                plan.local_lr,
            )
        elif setup.strategy == "fixed_ratio":
            state, log = run_round_fixed_ratio(state, packed, setup.plan.r, setup.master_seed)
        elif setup.strategy == "centralized":
            state, log = _centralized_round(state, setup.train_ds, setup.K, setup.master_seed)
        else:
            raise ValueError(f"unknown strategy: {setup.strategy!r}")

        if t % setup.eval_every == 0 or t == setup.rounds:
            ev = evaluate(state.params, setup.eval_ds)
            records.append(
                MetricsRecord(
                    round=t,
                    accuracy=ev.accuracy,
                    macro_f1=ev.macro_f1,
                    eval_loss=ev.mean_loss,
                    train_loss=log.train_loss,
                    effective_samples=log.effective_samples,
                    n_estimate=log.n_estimate,
                    n_true=log.n_true,
                    truthful_responses=log.truthful_responses,
                )
            )
    return TrainResult(records, state)
