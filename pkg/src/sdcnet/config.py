"""Run configuration files (JSON) with strict key checking."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .density import kernel_from_dict
from .partition import partition_from_dict
from .synth import SynthConfig
from .train.losses import VARIANTS
from .train.loop import TrainConfig


class ConfigError(ValueError):
    pass


def _strict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class NetworkConfig:
    widths: list = field(default_factory=lambda: [16, 32, 64, 64, 64])
    head_width: int = 64


@dataclass
class SynthSection:
    train: dict = field(default_factory=dict)
    test: dict = field(default_factory=dict)


@dataclass
class PartitionSection:
    kind: str = "one-linear"
    step: float | None = 0.5
    fine_step: float | None = None
    fine_end: float | None = None
    coarse_step: float | None = None
    c_max: float | None = 10.0
    c_max_quantile: float | None = None


@dataclass
class RunConfig:
    seed: int = 0
    variant: str = "sdcnet"
    stages: int = 2
    synth: SynthSection = field(default_factory=SynthSection)
    partition: PartitionSection = field(default_factory=PartitionSection)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: dict = field(default_factory=dict)
    train_overrides: dict = field(default_factory=dict)  # variant name -> train keys
    kernel: dict | None = None
    eval_split: str = "test"
    paths: dict = field(default_factory=dict)

    def synth_configs(self) -> tuple[SynthConfig, SynthConfig]:
        tr = {"n_images": 500, "count_range": [0, 10], "seed": self.seed, **self.synth.train}
        te = {"n_images": 500, "count_range": [0, 20], "seed": self.seed + 1, **self.synth.test}
        return _strict(SynthConfig, tr, "synth.train"), _strict(SynthConfig, te, "synth.test")

    def train_config(self, variant: str | None = None) -> TrainConfig:
        """Shared train settings, with ``train_overrides[variant]`` applied on top."""
        extra = self.train_overrides.get(variant or self.variant, {})
        return _strict(TrainConfig, {"seed": self.seed, **self.train, **extra}, "train")

    def partition_for(self, local_counts=None):
        """Build the partition; ``c_max_quantile`` needs the training local counts."""
        from .partition import cmax_from_quantile, round_up_to_step

        p = self.partition
        c_max = p.c_max
        if p.c_max_quantile is not None:
            if local_counts is None:
                raise ConfigError("partition.c_max_quantile needs training local counts")
            step = p.step if p.kind == "one-linear" else p.coarse_step
            c_max = round_up_to_step(cmax_from_quantile(local_counts, p.c_max_quantile), step)
        d = {"kind": p.kind, "c_max": c_max}
        if p.kind == "one-linear":
            d["step"] = p.step
        else:
            d.update(fine_step=p.fine_step, fine_end=p.fine_end, coarse_step=p.coarse_step)
        try:
            return partition_from_dict(d)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"partition: {exc}") from exc

    def kernel_spec(self):
        return None if self.kernel is None else kernel_from_dict(self.kernel)

    def to_json(self) -> dict:
        return {
            "seed": self.seed, "variant": self.variant, "stages": self.stages,
            "synth": {"train": self.synth.train, "test": self.synth.test},
            "partition": {f.name: getattr(self.partition, f.name) for f in fields(PartitionSection)},
            "network": {"widths": list(self.network.widths), "head_width": self.network.head_width},
            "train": self.train, "train_overrides": self.train_overrides, "kernel": self.kernel, "eval_split": self.eval_split, "paths": self.paths,
        }


def parse_run_config(data: dict) -> RunConfig:
    data = dict(data)
    data.pop("_comment", None)
    nested = {"synth": SynthSection, "partition": PartitionSection, "network": NetworkConfig}
    for key, cls in nested.items():
        if key in data:
            data[key] = _strict(cls, data[key], key)
    cfg = _strict(RunConfig, data, "config")
    if cfg.kernel is not None:
        try:
            kernel_from_dict(cfg.kernel)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"kernel: {exc}") from exc
    cfg.synth_configs()
    if not isinstance(cfg.train_overrides, dict):
        raise ConfigError("train_overrides: expected an object")
    unknown = sorted(set(cfg.train_overrides) - set(VARIANTS))
    if unknown:
        raise ConfigError(f"train_overrides: unknown variants {unknown}")
    cfg.train_config()
    for name in cfg.train_overrides:
        cfg.train_config(name)
    if cfg.partition.c_max_quantile is None:
        cfg.partition_for()
    return cfg


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_run_config(data)


def write_config_echo(cfg: RunConfig, out_dir, extra: dict | None = None) -> Path:
    path = Path(out_dir) / "config.json"
    with open(path, "w") as fh:
        json.dump({**cfg.to_json(), **(extra or {})}, fh, indent=1, sort_keys=True)
    return path
