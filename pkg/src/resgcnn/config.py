"""Run configuration: a JSON or YAML document with one section per concern.

Unknown keys are rejected everywhere. Every default reproduces the
published setup except the data section, which defaults to the small
synthetic dataset so that a bare invocation runs anywhere.
"""
from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

from .model import DEFAULT_ARCHITECTURE, Architecture
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    dataset: str = "synthetic"
    # directory with the raw recordings (pamap2, mhealth, tnda)
    path: str | None = None
    # an archive written by ``prepare``/``synth``; takes precedence over ``path``
    prepared: str | None = None
    # column map for tnda: a JSON file or an inline mapping
    tnda_columns: str | dict | None = None
    max_gap: int = 10
    # synthetic generator settings
    num_classes: int = 3
    samples_per_class: int = 200
    channels: int = 6
    snr_db: float | None = 10.0
    family_seed: int = 0
    class_offset: int = 0
    # base-frequency spacing between classes; 0 leaves correlation structure as the only cue
    frequency_step: int = 3
    # None uses the run seed
    sample_seed: int | None = None

    def __post_init__(self):
        if self.dataset not in ("pamap2", "mhealth", "tnda", "synthetic"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")


@dataclass
class TransferSection:
    mode: str = "single"  # "single" or "grid"
    source: str = ""
    target: str = ""
    # extra (source, target) pairs for grid mode
    plans: list = field(default_factory=list)
    freeze_blocks: bool = True
    fractions: list = field(default_factory=lambda: [0.05, 0.025])
    seeds: list = field(default_factory=lambda: [0])
    fewshot: bool = False
    # epochs for source training; None uses train.max_epochs
    source_max_epochs: int | None = None

    def __post_init__(self):
        if self.mode not in ("single", "grid"):
            raise ConfigError("transfer.mode must be 'single' or 'grid'")


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs"
    jobs: int = 1
    # "kfold", "single" (first fold only) or "fewshot"
    split: str = "kfold"
    data: DataSection = field(default_factory=DataSection)
    # named datasets for transfer runs, each shaped like ``data``
    datasets: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    transfer: TransferSection = field(default_factory=TransferSection)
    architecture: dict = field(default_factory=DEFAULT_ARCHITECTURE.to_dict)

    def __post_init__(self):
        if self.split not in ("kfold", "single", "fewshot"):
            raise ConfigError("split must be 'kfold', 'single' or 'fewshot'")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @property
    def arch(self) -> Architecture:
        try:
            return Architecture.from_dict(self.architecture)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid architecture: {exc}") from exc

    def train_config(self) -> TrainConfig:
        from dataclasses import replace

        return replace(self.train, seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)


def _section(cls, raw, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    top = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    if isinstance(raw.get("train"), dict) and "seed" in raw["train"]:
        raise ConfigError("set the seed at the top level, not in train")
    kw = {k: raw[k] for k in ("seed", "out", "jobs", "split") if k in raw}
    kw["data"] = _section(DataSection, raw.get("data"), "data")
    kw["datasets"] = {name: _section(DataSection, sec, f"datasets.{name}")
                      for name, sec in (raw.get("datasets") or {}).items()}
    kw["train"] = _section(TrainConfig, raw.get("train"), "train")
    kw["transfer"] = _section(TransferSection, raw.get("transfer"), "transfer")
    if "architecture" in raw:
        arch = raw["architecture"]
        _section(_ArchKeys, arch, "architecture")
        kw["architecture"] = {**DEFAULT_ARCHITECTURE.to_dict(), **arch}
    try:
        cfg = RunConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.arch  # validate early
    return cfg


@dataclass
class _ArchKeys:
    input_width: int = 0
    layers: list = field(default_factory=list)
    num_blocks: int = 0
    fc_width: int = 0


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw or {})


def describe() -> str:
    """Every config key with its default, for ``--help``."""
    lines = ["configuration keys (JSON or YAML; defaults in brackets):"]
    top = RunConfig()
    for f in fields(RunConfig):
        if f.name in ("data", "train", "transfer", "datasets", "architecture"):
            continue
        lines.append(f"  {f.name} [{getattr(top, f.name)}]")
    for name, cls in (("data", DataSection), ("train", TrainConfig), ("transfer", TransferSection)):
        inst = cls()
        lines.append(f"  {name}:")
        for f in fields(cls):
            if name == "train" and f.name == "seed":
                continue
            lines.append(f"    {f.name} [{getattr(inst, f.name)}]")
    lines.append("  datasets: {name: <data section>}  (named datasets for transfer)")
    lines.append(f"  architecture [{json.dumps(DEFAULT_ARCHITECTURE.to_dict())}]")
    return "\n".join(lines)
