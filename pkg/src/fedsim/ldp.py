"""Privacy-preserving total-sample-size estimation.

Each client clips its private sample count to the size threshold, then with
probability alpha reports the clipped truth and otherwise reports an integer
drawn uniformly from {1..M-1}.  The server de-biases the response sum into
an unbiased estimate of the total count.  Choosing
alpha = (e^eps - 1) / (e^eps + M - 2) makes the report mechanism eps-LDP.

Privacy caveat: a client holding zero samples truthfully reports 0, which is
outside the fake-response support {1..M-1}, so a 0 is recognizably truthful.
LdpConfig(strict_positive_truth=True) clamps truthful reports to at least 1,
trading a small positive bias for keeping all outputs in the shared support.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .rng import RandomStream, derive


def alpha_for_budget(epsilon: float, M: int) -> float:
    """Truth probability meeting an eps-LDP budget at size threshold M."""
    if epsilon <= 0:
        raise ValueError(f"privacy budget must be positive, got {epsilon}")
    if M < 2:
        raise ValueError(f"size threshold must be >= 2, got {M}")
    e = math.exp(epsilon)
    return (e - 1.0) / (e + M - 2.0)


@dataclass(frozen=True)
class LdpConfig:
    """(epsilon, M, alpha) triple governing response randomization.

    alpha in [0, 1]; the endpoints are degenerate test configurations
    (0 = never truthful, 1 = no privacy) and the estimator rejects alpha=0.
    Build via from_budget() to derive alpha from a privacy budget.
    """

    epsilon: Optional[float]
    M: int
    alpha: float
    strict_positive_truth: bool = False

    def __post_init__(self) -> None:
        if self.M < 2:
            raise ValueError(f"size threshold must be >= 2, got {self.M}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha out of [0, 1]: {self.alpha}")
        if self.epsilon is not None:
            if self.epsilon <= 0:
                raise ValueError(f"privacy budget must be positive, got {self.epsilon}")
            if self.alpha < 1.0:
                # round-trip identity between alpha and the budget
                implied = ((self.M - 2) * self.alpha + 1.0) / (1.0 - self.alpha)
                if abs(implied - math.exp(self.epsilon)) > 1e-9 * max(1.0, math.exp(self.epsilon)):
                    raise ValueError(
                        f"alpha {self.alpha} inconsistent with epsilon {self.epsilon} at M {self.M}"
                    )

    @classmethod
    def from_budget(cls, epsilon: float, M: int = 300, strict_positive_truth: bool = False) -> "LdpConfig":
        return cls(epsilon, M, alpha_for_budget(epsilon, M), strict_positive_truth)


@dataclass(frozen=True)
class SizeResponse:
    """One client's size report.  Only `value` ever reaches the server role;
    `truthful` is simulator bookkeeping for diagnostics and tests."""

    value: int
    truthful: bool

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError("response value must be non-negative")


def clip_size(n: int, M: int) -> int:
    """Truthful report before randomization: min(n, M-1)."""
    if n < 0:
        raise ValueError(f"sample count must be non-negative, got {n}")
    if M < 2:
        raise ValueError(f"size threshold must be >= 2, got {M}")
    return min(n, M - 1)


def randomize_response(n_clipped: int, cfg: LdpConfig, stream: RandomStream) -> SizeResponse:
    """Report the clipped truth w.p. alpha, else uniform on {1..M-1}."""
    if not 0 <= n_clipped <= cfg.M - 1:
        raise ValueError(f"clipped size {n_clipped} outside [0, {cfg.M - 1}]")
    if stream.bernoulli(cfg.alpha):
        value = max(1, n_clipped) if cfg.strict_positive_truth else n_clipped
        return SizeResponse(value, True)
    return SizeResponse(stream.uniform_int(1, cfg.M - 1), False)


def randomize_responses(
    clipped: np.ndarray, cfg: LdpConfig, stream: RandomStream
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized randomize_response over a client axis.

    Returns (values, truthful_mask); one truth coin and one fake draw are
    consumed per client in array order.
    """
    clipped = np.asarray(clipped, dtype=np.int64)
    if clipped.size and (clipped.min() < 0 or clipped.max() > cfg.M - 1):
        raise ValueError("clipped sizes outside response range")
    truthful = stream.bernoulli_array(cfg.alpha, clipped.size)
    fakes = stream.uniform_ints(1, cfg.M - 1, clipped.size)
    truth_values = np.maximum(clipped, 1) if cfg.strict_positive_truth else clipped
    return np.where(truthful, truth_values, fakes), truthful


def estimate_total(response_sum: int, clients: int, cfg: LdpConfig) -> float:
    """Unbiased total-size estimate from the summed responses.

    May be non-positive under heavy randomization; returned raw so the
    estimator stays unbiased.  Downstream sampling clamps as needed.
    """
    if clients < 1:
        raise ValueError("need at least one client")
    if cfg.alpha == 0.0:
        raise ValueError("estimator undefined at alpha = 0 (responses carry no signal)")
    return (response_sum - (1.0 - cfg.alpha) * cfg.M * clients / 2.0) / cfg.alpha


@dataclass(frozen=True)
class LdpCheck:
    epsilon: float
    M: int
    alpha: float
    analytic_ratio: float
    bound: float
    satisfies: bool


def verify_ldp_ratio(cfg: LdpConfig) -> LdpCheck:
    """Worst-case output-probability ratio of the report mechanism.

    For inputs in {1..M-1} the ratio is between a truthful match
    (alpha + (1-alpha)/(M-1)) and a non-match ((1-alpha)/(M-1)); the check
    passes when it is at most e^epsilon (+1e-9 slack).
    """
    if cfg.alpha >= 1.0:
        raise ValueError("alpha = 1 has an infinite ratio (no privacy)")
    if cfg.epsilon is None:
        raise ValueError("config carries no privacy budget to check against")
    p_match = cfg.alpha + (1.0 - cfg.alpha) / (cfg.M - 1)
    p_other = (1.0 - cfg.alpha) / (cfg.M - 1)
    ratio = p_match / p_other
    bound = math.exp(cfg.epsilon)
    return LdpCheck(cfg.epsilon, cfg.M, cfg.alpha, ratio, bound, ratio <= bound + 1e-9)


# -- estimator bench ----------------------------------------------------


@dataclass(frozen=True)
class SizeLaw:
    """Distribution of per-client sample counts for the bench.

    kind "lognormal": counts are round(exp(N(mu, sigma^2))) with mu chosen so
    the pre-rounding mean is mean_size, optionally capped.  kind "constant":
    every client holds mean_size samples.
    """

    kind: str = "lognormal"
    mean_size: float = 100.0
    sigma: float = 0.5
    cap: Optional[int] = None

    def draw(self, clients: int, stream: RandomStream) -> np.ndarray:
        if self.kind == "constant":
            sizes = np.full(clients, int(round(self.mean_size)), dtype=np.int64)
        elif self.kind == "lognormal":
            mu = math.log(self.mean_size) - self.sigma**2 / 2.0
            raw = np.exp(mu + self.sigma * stream.standard_normals(clients))
            sizes = np.round(raw).astype(np.int64)
        else:
            raise ValueError(f"unknown size law: {self.kind!r}")
        sizes = np.maximum(sizes, 0)
        if self.cap is not None:
            sizes = np.minimum(sizes, self.cap)
        return sizes


@dataclass(frozen=True)
class EstimatorBenchRow:
    clients: int
    trials: int
    excluded_nonpositive: int
    mse_probability: float
    mean_estimate: float
    mean_true_total: float
    mean_scaled_demand: float  # mean of N*K/estimate over kept trials

    def as_dict(self) -> dict:
        return {
            "clients": self.clients,
            "trials": self.trials,
            "excluded_nonpositive": self.excluded_nonpositive,
            "mse_probability": self.mse_probability,
            "mean_estimate": self.mean_estimate,
            "mean_true_total": self.mean_true_total,
            "mean_scaled_demand": self.mean_scaled_demand,
        }


def bench_estimator_mse(
    client_counts: Sequence[int],
    cfg: LdpConfig,
    size_law: SizeLaw,
    K: int,
    trials: int,
    seed: int,
) -> list[EstimatorBenchRow]:
    """Monte Carlo MSE between the estimated and true sampling probability.

    Per trial: draw client sizes from size_law, randomize responses, estimate
    the total, and score (K/estimate - K/true)^2.  Trials with a non-positive
    estimate are excluded from the MSE and reported in the row.
    """
    if trials < 30:
        raise ValueError("need at least 30 trials for a stable bench")
    rows = []
    for h_index, clients in enumerate(client_counts):
        sq_errors, kept_est, kept_true, scaled = [], [], [], []
        excluded = 0
        for t in range(trials):
            stream = derive(seed, [("bench", h_index), ("trial", t)])
            sizes = size_law.draw(clients, stream)
            true_total = int(sizes.sum())
            clipped = np.minimum(sizes, cfg.M - 1)
            values, _ = randomize_responses(clipped, cfg, stream)
            estimate = estimate_total(int(values.sum()), clients, cfg)
            if estimate <= 0 or true_total <= 0:
                excluded += 1
                continue
            sq_errors.append((K / estimate - K / true_total) ** 2)
            kept_est.append(estimate)
            kept_true.append(true_total)
            scaled.append(true_total * K / estimate)
        rows.append(
            EstimatorBenchRow(
                clients=int(clients),
                trials=trials,
                excluded_nonpositive=excluded,
                mse_probability=float(np.mean(sq_errors)) if sq_errors else float("nan"),
                mean_estimate=float(np.mean(kept_est)) if kept_est else float("nan"),
                mean_true_total=float(np.mean(kept_true)) if kept_true else float("nan"),
                mean_scaled_demand=float(np.mean(scaled)) if scaled else float("nan"),
            )
        )
    return rows
