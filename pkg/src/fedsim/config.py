"""Experiment and sweep configuration files.

Configs are single human-readable TOML files that round-trip exactly:
parse(serialize(cfg)) == cfg.  A sweep file wraps a base experiment config
plus one or two swept axes addressed by dotted key paths, expanded as a
cartesian grid under a configurable cap.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from math import ceil
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import PartitionSpec
from .ldp import LdpConfig
from .model import ModelSpec
from .sampling import STRATEGIES, SamplingPlan

RUN_STRATEGIES = STRATEGIES + ("centralized",)


@dataclass(frozen=True)
class DatasetSpec:
    n: int
    n_test: int
    dim: int
    classes: int
    class_sep: float

    def __post_init__(self) -> None:
        if self.n < 1 or self.n_test < 1:
            raise ValueError("dataset sizes must be >= 1")
        if self.dim < 1 or self.classes < 2:
            raise ValueError("need dim >= 1 and classes >= 2")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "linear"
    hidden: Optional[int] = None
    init_scale: float = 0.0


@dataclass(frozen=True)
class LdpSettings:
    epsilon: float = 3.0
    M: int = 300
    strict_positive_truth: bool = False

    def build(self) -> LdpConfig:
        return LdpConfig.from_budget(self.epsilon, self.M, self.strict_positive_truth)


@dataclass(frozen=True)
class StrategyOptions:
    """Per-strategy parameter table; only the chosen strategy's table is used."""

    m: Optional[int] = None
    local_epochs: int = 1
    batch_size: Optional[int] = None
    local_lr: float = 1.0
    r: Optional[float] = None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seeds: tuple[int, ...]
    rounds: int
    eval_every: int
    eta: float
    K: int
    out: str
    dataset: DatasetSpec
    partition: PartitionSpec
    model: ModelConfig
    ldp: LdpSettings
    strategy: str
    options: dict[str, StrategyOptions] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.strategy not in RUN_STRATEGIES:
            raise ValueError(f"unknown strategy: {self.strategy!r}")
        if self.K > self.dataset.n:
            raise ValueError(f"K={self.K} exceeds dataset size {self.dataset.n}")
        if self.strategy in ("uniform_client", "weighted_client"):
            opts = self.options.get(self.strategy)
            if opts is None or opts.m is None:
                raise ValueError(f"{self.strategy} needs an options table with m")
            if opts.m > self.client_count():
                raise ValueError(f"m={opts.m} exceeds client count {self.client_count()}")
        if self.strategy == "fixed_ratio":
            opts = self.options.get("fixed_ratio")
            if opts is None or opts.r is None:
                raise ValueError("fixed_ratio needs an options table with r")

    def client_count(self) -> int:
        if self.partition.scheme == "label_shards":
            return ceil(self.dataset.n / self.partition.shard_size)
        return self.partition.clients

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            kind=self.model.kind,
            dim=self.dataset.dim,
            classes=self.dataset.classes,
            hidden=self.model.hidden,
            init_scale=self.model.init_scale,
        )

    def plan(self) -> Optional[SamplingPlan]:
        if self.strategy == "centralized":
            return None
        if self.strategy == "fedsampling":
            return SamplingPlan("fedsampling", K=self.K)
        opts = self.options[self.strategy] if self.strategy in self.options else StrategyOptions()
        if self.strategy == "fixed_ratio":
            return SamplingPlan("fixed_ratio", r=opts.r)
        return SamplingPlan(
            self.strategy,
            m=opts.m,
            local_epochs=opts.local_epochs,
            batch_size=opts.batch_size,
            local_lr=opts.local_lr,
        )


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    axes: tuple[tuple[str, tuple], ...] = ()
    cap: int = 64

    def __post_init__(self) -> None:
        if len(self.axes) > 2:
            raise ValueError("at most two swept axes")
        for key, values in self.axes:
            if not values:
                raise ValueError(f"axis {key!r} has no values")


@dataclass(frozen=True)
class GridPoint:
    label: str
    overrides: tuple[tuple[str, Any], ...]
    config: ExperimentConfig


# -- dict <-> dataclass ---------------------------------------------------


def _dataset_from(d: dict) -> DatasetSpec:
    return DatasetSpec(
        n=d["n"],
        n_test=d["n_test"],
        dim=d["dim"],
        classes=d["classes"],
        class_sep=float(d["class_sep"]),
    )


def _partition_from(d: dict) -> PartitionSpec:
    return PartitionSpec(
        scheme=d["scheme"],
        clients=d.get("clients"),
        sigma=float(d["sigma"]) if "sigma" in d else None,
        mean_size=float(d["mean_size"]) if "mean_size" in d else None,
        shard_size=d.get("shard_size"),
    )


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        strategy_table = dict(doc["strategy"])
        strategy = strategy_table.pop("name")
        options = {
            key: StrategyOptions(**table) for key, table in strategy_table.items()
        }
        return ExperimentConfig(
            name=doc["name"],
            seeds=tuple(int(s) for s in doc["seeds"]),
            rounds=int(doc["rounds"]),
            eval_every=int(doc.get("eval_every", 1)),
            eta=float(doc["eta"]),
            K=int(doc["K"]),
            out=doc.get("out", "results"),
            dataset=_dataset_from(doc["dataset"]),
            partition=_partition_from(doc["partition"]),
            model=ModelConfig(**doc.get("model", {})),
            ldp=LdpSettings(**doc.get("ldp", {})),
            strategy=strategy,
            options=options,
        )
    except KeyError as exc:
        raise ValueError(f"config missing required key: {exc}") from exc
    except TypeError as exc:
        raise ValueError(f"malformed config table: {exc}") from exc


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc: dict[str, Any] = {
        "name": cfg.name,
        "seeds": list(cfg.seeds),
        "rounds": cfg.rounds,
        "eval_every": cfg.eval_every,
        "eta": cfg.eta,
        "K": cfg.K,
        "out": cfg.out,
        "dataset": {
            "n": cfg.dataset.n,
            "n_test": cfg.dataset.n_test,
            "dim": cfg.dataset.dim,
            "classes": cfg.dataset.classes,
            "class_sep": cfg.dataset.class_sep,
        },
        "partition": _drop_none(
            {
                "scheme": cfg.partition.scheme,
                "clients": cfg.partition.clients,
                "sigma": cfg.partition.sigma,
                "mean_size": cfg.partition.mean_size,
                "shard_size": cfg.partition.shard_size,
            }
        ),
        "model": _drop_none(
            {
                "kind": cfg.model.kind,
                "hidden": cfg.model.hidden,
                "init_scale": cfg.model.init_scale,
            }
        ),
        "ldp": {
            "epsilon": cfg.ldp.epsilon,
            "M": cfg.ldp.M,
            "strict_positive_truth": cfg.ldp.strict_positive_truth,
        },
        "strategy": {"name": cfg.strategy},
    }
    for key in sorted(cfg.options):
        opts = cfg.options[key]
        doc["strategy"][key] = _drop_none(
            {
                "m": opts.m,
                "local_epochs": opts.local_epochs,
                "batch_size": opts.batch_size,
                "local_lr": opts.local_lr,
                "r": opts.r,
            }
        )
    return doc


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def parse_sweep(doc: dict) -> SweepSpec:
    base = parse_config(doc["base"])
    axes = tuple(
        (axis["key"], tuple(axis["values"])) for axis in doc.get("axes", [])
    )
    return SweepSpec(base=base, axes=axes, cap=int(doc.get("cap", 64)))


def sweep_to_dict(spec: SweepSpec) -> dict:
    doc: dict[str, Any] = {"cap": spec.cap}
    if spec.axes:
        doc["axes"] = [{"key": k, "values": list(v)} for k, v in spec.axes]
    doc["base"] = config_to_dict(spec.base)
    return doc


# -- TOML I/O ---------------------------------------------------------------


def dumps_toml(doc: dict, _prefix: str = "") -> str:
    """Serialize a nested dict of scalars / scalar lists / tables to TOML."""
    scalars, arrays_of_tables, tables = [], [], []
    for key, value in doc.items():
        if isinstance(value, dict):
            tables.append((key, value))
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            arrays_of_tables.append((key, value))
        else:
            scalars.append((key, value))
    lines = []
    for key, value in scalars:
        lines.append(f"{key} = {_toml_value(value)}")
    for key, entries in arrays_of_tables:
        for entry in entries:
            lines.append("")
            lines.append(f"[[{_prefix}{key}]]")
            lines.append(dumps_toml(entry, _prefix=f"{_prefix}{key}."))
    for key, table in tables:
        lines.append("")
        lines.append(f"[{_prefix}{key}]")
        lines.append(dumps_toml(table, _prefix=f"{_prefix}{key}."))
    return "\n".join(lines).strip() + ("\n" if not _prefix else "")


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__} to TOML")


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(_load_toml(path))


def load_sweep(path: str | Path) -> SweepSpec:
    return parse_sweep(_load_toml(path))


def _load_toml(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(dumps_toml(config_to_dict(cfg)))


def save_sweep(spec: SweepSpec, path: str | Path) -> None:
    Path(path).write_text(dumps_toml(sweep_to_dict(spec)))


# -- sweep expansion --------------------------------------------------------


def _set_dotted(doc: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _axis_label(key: str, value: Any) -> str:
    short = key.split(".")[-1]
    return f"{short}={value}"


def expand_sweep(spec: SweepSpec) -> list[GridPoint]:
    """Cartesian expansion of the swept axes over the base config."""
    combos: list[tuple[tuple[str, Any], ...]] = [()]
    for key, values in spec.axes:
        combos = [prior + ((key, v),) for prior in combos for v in values]
    if len(combos) > spec.cap:
        raise ValueError(f"sweep expands to {len(combos)} points, over cap {spec.cap}")
    points = []
    for overrides in combos:
        doc = config_to_dict(spec.base)
        for key, value in overrides:
            _set_dotted(doc, key, value)
        label = "_".join(_axis_label(k, v) for k, v in overrides) or "base"
        points.append(GridPoint(label=label, overrides=overrides, config=parse_config(doc)))
    return points


# -- presets ----------------------------------------------------------------

PRESET_NAMES = ("imbalanced", "sigma-sweep", "noniid", "privacy-tradeoff")


def preset_path(name: str) -> Path:
    if name not in PRESET_NAMES:
        raise ValueError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
    return Path(str(resources.files("fedsim").joinpath("presets", f"{name}.toml")))


def load_preset(name: str) -> SweepSpec:
    return load_sweep(preset_path(name))
