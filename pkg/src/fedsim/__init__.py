"""Deterministic federated-learning simulator.

Compares per-sample uniform data sampling (driven by a privacy-preserving
total-sample-size estimate) against client-level sampling baselines, with a
statistical bench for the estimator and its privacy guarantee.
"""

__version__ = "0.1.0"

from .data import ClientDataset, Dataset, PartitionSpec, make_synthetic_classification, partition
from .engine import ServerState, TrainSetup, run_centralized, train
from .ldp import LdpConfig, SizeLaw, alpha_for_budget, bench_estimator_mse, estimate_total, verify_ldp_ratio
from .model import ModelSpec, ParamVector, evaluate, init_params, loss_and_grad
from .rng import RandomStream, StreamKey, derive
from .sampling import SamplingPlan, fedsampling_select

__all__ = [
    "ClientDataset",
    "Dataset",
    "LdpConfig",
    "ModelSpec",
    "ParamVector",
    "PartitionSpec",
    "RandomStream",
    "SamplingPlan",
    "ServerState",
    "SizeLaw",
    "StreamKey",
    "TrainSetup",
    "__version__",
    "alpha_for_budget",
    "bench_estimator_mse",
    "derive",
    "estimate_total",
    "evaluate",
    "fedsampling_select",
    "init_params",
    "loss_and_grad",
    "make_synthetic_classification",
    "partition",
    "run_centralized",
    "train",
    "verify_ldp_ratio",
]
