"""Experiment and sweep runners.

One experiment = one config run under each of its seeds.  Every run writes a
JSONL metric history (one record per evaluated round); the experiment folds
them into an aggregate CSV of per-round means and standard deviations across
seeds, a manifest recording the resolved config and code version, and, on
the report path, rendered figures next to the delimited output.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import (
    ExperimentConfig,
    GridPoint,
    SweepSpec,
    config_to_dict,
    expand_sweep,
    sweep_to_dict,
)
from .data import Dataset, make_synthetic_classification, partition
from .engine import MetricsRecord, TrainResult, TrainSetup, train
from .rng import derive

AGGREGATE_METRICS = (
    "accuracy",
    "macro_f1",
    "eval_loss",
    "train_loss",
    "effective_samples",
    "n_estimate",
)


def build_setup(cfg: ExperimentConfig, seed: int) -> TrainSetup:
    """Materialize one seeded run: data, partition, model, plan.

    Data, partition, and model init derive from (seed, purpose) only, so
    every strategy sees the same world under the same seed.  Train and
    held-out sets are one mixture draw split in two, so they share the
    same class components.
    """
    d = cfg.dataset
    pool = make_synthetic_classification(
        d.n + d.n_test, d.dim, d.classes, d.class_sep, derive(seed, [("data", 0)])
    )
    train_ds = Dataset(pool.features[: d.n], pool.labels[: d.n])
    eval_ds = Dataset(pool.features[d.n :], pool.labels[d.n :])
    clients = None
    if cfg.strategy != "centralized":
        clients = partition(train_ds, cfg.partition, derive(seed, [("partition", 0)]))
    return TrainSetup(
        strategy=cfg.strategy,
        model=cfg.model_spec(),
        train_ds=train_ds,
        eval_ds=eval_ds,
        clients=clients,
        plan=cfg.plan(),
        ldp=cfg.ldp.build() if cfg.strategy == "fedsampling" else None,
        eta=cfg.eta,
        K=cfg.K,
        rounds=cfg.rounds,
        eval_every=cfg.eval_every,
        master_seed=seed,
    )


@dataclass
class ExperimentResult:
    out_dir: Path
    histories: dict[int, list[MetricsRecord]]
    aggregate: list[dict]

    def final_aggregate(self) -> Optional[dict]:
        return self.aggregate[-1] if self.aggregate else None


def run_experiment(
    cfg: ExperimentConfig, out_dir: Optional[str | Path] = None, figures: bool = True
) -> ExperimentResult:
    out = Path(out_dir) if out_dir is not None else Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    histories: dict[int, list[MetricsRecord]] = {}
    for seed in cfg.seeds:
        result: TrainResult = train(build_setup(cfg, seed))
        histories[seed] = result.records
        write_jsonl(out / f"run_seed{seed}.jsonl", result.records)

    aggregate = aggregate_histories(histories)
    write_aggregate_csv(out / "aggregate.csv", aggregate)
    write_manifest(out / "manifest.json", {"config": config_to_dict(cfg)})
    if figures:
        from . import report

        report.render_experiment(out, aggregate, cfg.name)
    return ExperimentResult(out, histories, aggregate)


def aggregate_histories(histories: dict[int, list[MetricsRecord]]) -> list[dict]:
    """Per-round mean and std (ddof=1; 0.0 for a single seed) across seeds.

    All runs of one experiment share the eval schedule, so rounds align.
    """
    seeds = sorted(histories)
    if not seeds:
        return []
    length = len(histories[seeds[0]])
    for s in seeds:
        if len(histories[s]) != length:
            raise ValueError("seed histories have mismatched eval schedules")
    rows = []
    for i in range(length):
        records = [histories[s][i] for s in seeds]
        rounds = {r.round for r in records}
        if len(rounds) != 1:
            raise ValueError("seed histories have mismatched eval rounds")
        row: dict = {"round": records[0].round, "n_seeds": len(seeds)}
        for metric in AGGREGATE_METRICS:
            values = [getattr(r, metric) for r in records]
            present = [v for v in values if v is not None]
            if not present:
                row[f"{metric}_mean"] = None
                row[f"{metric}_std"] = None
                continue
            arr = np.asarray(present, dtype=np.float64)
            row[f"{metric}_mean"] = float(arr.mean())
            row[f"{metric}_std"] = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        rows.append(row)
    return rows


def write_jsonl(path: Path, records: list[MetricsRecord]) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record.as_dict(), separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path: Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_aggregate_csv(path: Path, rows: list[dict]) -> None:
    header = ["round", "n_seeds"]
    for metric in AGGREGATE_METRICS:
        header += [f"{metric}_mean", f"{metric}_std"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(row.get(col)) for col in header])


def write_manifest(path: Path, payload: dict) -> None:
    payload = {"fedsim_version": __version__, **payload}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")


# -- sweeps -------------------------------------------------------------


@dataclass
class SweepResult:
    out_dir: Path
    points: list[GridPoint]
    combined: list[dict]


def run_sweep(
    spec: SweepSpec, out_dir: Optional[str | Path] = None, figures: bool = True
) -> SweepResult:
    points = expand_sweep(spec)
    out = Path(out_dir) if out_dir is not None else Path(spec.base.out)
    out.mkdir(parents=True, exist_ok=True)

    combined: list[dict] = []
    for point in points:
        result = run_experiment(point.config, out / point.label, figures=figures)
        final = result.final_aggregate()
        row: dict = {key.split(".")[-1]: value for key, value in point.overrides}
        row["label"] = point.label
        if final:
            row["round"] = final["round"]
            for metric in ("accuracy", "macro_f1", "eval_loss"):
                row[f"{metric}_mean"] = final[f"{metric}_mean"]
                row[f"{metric}_std"] = final[f"{metric}_std"]
        combined.append(row)

    write_combined_csv(out / "combined.csv", combined, spec)
    write_manifest(out / "manifest.json", {"sweep": sweep_to_dict(spec)})
    if figures:
        from . import report

        report.render_sweep(out, combined, [key for key, _ in spec.axes])
    return SweepResult(out, points, combined)


def write_combined_csv(path: Path, rows: list[dict], spec: SweepSpec) -> None:
    axis_cols = [key.split(".")[-1] for key, _ in spec.axes]
    header = axis_cols + ["label", "round"]
    for metric in ("accuracy", "macro_f1", "eval_loss"):
        header += [f"{metric}_mean", f"{metric}_std"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(row.get(col)) for col in header])
