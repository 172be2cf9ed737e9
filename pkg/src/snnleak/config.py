"""Experiment configuration schema, presets and expansion.

A config is a YAML (or JSON) mapping. ``preset`` names a base config whose
values are overridden by anything set explicitly; the fully expanded config,
with every default spelled out, is written next to each run's results.
"""

from __future__ import annotations

import copy
import math
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .network import NetworkModel, Topology
from .neurons import NeuronKind
from .synthetic import SyntheticTaskSpec
from .training import TrainConfig


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticBlock(_Block):
    kind: Literal["rate", "temporal"] = "rate"
    class_count: int = Field(4, ge=2)
    channel_count: int = Field(40, ge=1)
    duration_ms: float = Field(700.0, gt=0)
    train_samples: int = Field(400, ge=1)
    test_samples: int = Field(200, ge=1)
    seed: int = 0
    rate_hz: float = Field(40.0, ge=0)
    background_hz: float = Field(2.0, ge=0)
    burst_ms: float = Field(100.0, gt=0)
    gap_ms: float = Field(150.0, ge=0)
    spikes_per_channel: int = Field(2, ge=1)
    onset_jitter_ms: float = Field(100.0, ge=0)
    noise_hz: float = Field(0.0, ge=0)

    def spec(self) -> SyntheticTaskSpec:
        return SyntheticTaskSpec(**self.model_dump())


class DatasetBlock(_Block):
    source: Literal["synthetic", "manifest"] = "synthetic"
    train_manifest: Optional[str] = None
    test_manifest: Optional[str] = None
    class_count: Optional[int] = Field(None, ge=2)
    synthetic: Optional[SyntheticBlock] = None
    dt_ms: float = Field(14.0, gt=0)
    steps: int = Field(50, ge=1)

    @model_validator(mode="after")
    def _check_source(self):
        if self.source == "synthetic" and self.synthetic is None:
            self.synthetic = SyntheticBlock()
        if self.source == "manifest" and not self.train_manifest and not self.test_manifest:
            raise ValueError("manifest source needs train_manifest and/or test_manifest")
        return self


class TopologyBlock(_Block):
    n_in: Optional[int] = Field(None, ge=1)
    n_hidden: int = Field(200, ge=1)
    n_out: Optional[int] = Field(None, ge=1)
    recurrent: bool = False

    def build(self) -> Topology:
        if self.n_in is None or self.n_out is None:
            raise ConfigError("topology", "n_in and n_out are unresolved")
        return Topology(self.n_in, self.n_hidden, self.n_out, self.recurrent)


class ModelBlock(_Block):
    kind: Literal["IF", "LIF", "CUBA_LIF"] = "IF"
    tau_mem_ms: float = Field(math.inf, ge=0)
    tau_syn_ms: float = Field(0.0, ge=0)
    heterogeneous: bool = False

    @field_validator("kind", mode="before")
    @classmethod
    def _norm_kind(cls, v):
        return NeuronKind.parse(v).value if isinstance(v, str) else v

    @model_validator(mode="after")
    def _pin_kind(self):
        # pinned decays are reported as what the dynamics actually use
        if self.kind in ("IF", "LIF"):
            self.tau_syn_ms = 0.0
        if self.kind == "IF":
            self.tau_mem_ms = math.inf
        if self.heterogeneous and self.kind != "IF" and math.isinf(self.tau_mem_ms):
            raise ValueError("heterogeneous training needs a finite tau_mem_ms")
        if self.heterogeneous and self.kind == "CUBA_LIF" and self.tau_syn_ms == 0:
            raise ValueError("heterogeneous CUBA_LIF needs tau_syn_ms > 0")
        if self.tau_mem_ms == 0:
            raise ValueError("tau_mem_ms must be positive")
        return self

    def build(self, topology: Topology, dt_ms: float) -> NetworkModel:
        return NetworkModel.homogeneous(self.kind, topology, self.tau_mem_ms, self.tau_syn_ms, dt_ms)


class TrainingBlock(_Block):
    lr: float = Field(5e-3, gt=0)
    batch_size: int = Field(256, ge=1)
    epochs: int = Field(50, ge=0)
    surrogate_steepness: float = Field(100.0, gt=0)
    adamax_beta1: float = Field(0.9, ge=0, lt=1)
    adamax_beta2: float = Field(0.999, ge=0, lt=1)
    adamax_eps: float = Field(1e-8, gt=0)
    record_wall_time: bool = False

    def build(self, seed: int, heterogeneous: bool) -> TrainConfig:
        return TrainConfig(seed=seed, heterogeneous=heterogeneous, **self.model_dump())


class SweepBlock(_Block):
    tau_mem_ms: list[float] = Field(default_factory=lambda: [14.0, 70.0, 140.0, 420.0, 700.0, 1120.0, 1680.0, math.inf])
    tau_syn_ms: list[float] = Field(default_factory=lambda: [0.0, 14.0, 28.0, 70.0, 140.0])
    kind: Optional[Literal["IF", "LIF", "CUBA_LIF"]] = None

    @field_validator("tau_mem_ms", "tau_syn_ms")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("must be non-empty")
        if any(t < 0 for t in v):
            raise ValueError("time constants must be non-negative")
        return v


class ExperimentConfig(_Block):
    preset: Optional[str] = None
    dataset: DatasetBlock = Field(default_factory=DatasetBlock)
    topology: TopologyBlock = Field(default_factory=TopologyBlock)
    model: ModelBlock = Field(default_factory=ModelBlock)
    training: TrainingBlock = Field(default_factory=TrainingBlock)
    sweep: SweepBlock = Field(default_factory=SweepBlock)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "runs"
    jobs: int = Field(1, ge=1)

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if not v:
            raise ValueError("at least one seed is required")
        return v

    @model_validator(mode="after")
    def _sizes_from_synthetic(self):
        syn = self.dataset.synthetic if self.dataset.source == "synthetic" else None
        if syn is not None:
            for field_name, value in (("n_in", syn.channel_count), ("n_out", syn.class_count)):
                current = getattr(self.topology, field_name)
                if current is None:
                    setattr(self.topology, field_name, value)
                elif current != value:
                    raise ValueError(f"topology.{field_name}={current} disagrees with synthetic dataset ({value})")
        return self

    def dump(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="python"), sort_keys=False)


PRESETS: dict[str, dict] = {
    "nmnist-like": {
        "dataset": {"source": "manifest", "dt_ms": 14.0, "steps": 22, "class_count": 10},
        "topology": {"n_in": 2312, "n_hidden": 200, "n_out": 10},
        "model": {"kind": "LIF", "tau_mem_ms": 1680.0},
        "training": {"lr": 5e-3, "batch_size": 256, "epochs": 50, "surrogate_steepness": 100.0},
    },
    "shd-like": {
        "dataset": {"source": "manifest", "dt_ms": 14.0, "steps": 100, "class_count": 20},
        "topology": {"n_in": 700, "n_hidden": 200, "n_out": 20, "recurrent": True},
        "model": {"kind": "LIF", "tau_mem_ms": 1680.0},
        "training": {"lr": 2e-4, "batch_size": 128, "epochs": 200, "surrogate_steepness": 100.0},
    },
    "synthetic-rate": {
        "dataset": {
            "source": "synthetic",
            "steps": 50,
            "synthetic": {"kind": "rate", "class_count": 4, "channel_count": 40, "duration_ms": 700.0},
        },
        "topology": {"n_hidden": 64},
        "model": {"kind": "IF"},
        "training": {"lr": 5e-3, "batch_size": 32, "epochs": 10},
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _format_loc(loc) -> str:
    parts = [str(p) for p in loc if not (isinstance(p, str) and p in ("function-after",))]
    return ".".join(parts) or "<root>"


def expand(raw: dict) -> ExperimentConfig:
    """Apply the preset (if any) and validate, raising ConfigError with a field path."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    preset = raw.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        raw = _merge(PRESETS[preset], raw)
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(_format_loc(err["loc"]), err["msg"]) from None


def load_config(path: str | Path | None, overrides: Optional[dict] = None) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        except yaml.YAMLError as exc:
            raise ConfigError("--config", f"cannot parse: {exc}") from None
    if overrides:
        raw = _merge(raw, overrides)
    cfg = expand(raw)
    base = Path(path).parent if path is not None else Path(".")
    for name in ("train_manifest", "test_manifest"):
        p = getattr(cfg.dataset, name)
        if p is not None and not Path(p).is_absolute():
            setattr(cfg.dataset, name, str((base / p).resolve()))
    return cfg
