"""Run configuration: one YAML file plus ``key=value`` overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .feature_maps import MAP_NAMES
from .ring_geometry import VALID_DIVISIONS


@dataclass
class RunConfig:
    patch_size: int = 32
    divisions: int = 8
    gaussian_sigma: float = 2.0
    gaussian_kernel: int = 7
    maps: list = field(default_factory=lambda: list(MAP_NAMES))
    # bit selection
    n_bits: int = 256
    t_c: float = 0.25
    folds: int = 4
    literal_eq2: bool = False
    literal_phi_sign: bool = False
    cycle_folds: bool = True
    reweight_rejected: bool = False
    train_matches: int | None = None
    pair_ratio: float = 3.0
    # group weights
    regularizer: str = "l1"
    subgroups: int = 1
    allow_uneven_subgroups: bool = False
    mu1: float = 0.05
    mu2: float = 1.0
    gamma: float = 1000.0
    instance_budget: int = 500_000
    iterations: int | None = None
    epochs: int = 1
    # evaluation
    recall: float = 0.95
    # run
    seed: int = 0
    memory_cap_mb: float = 2048.0
    workers: int = 1

    def validate(self) -> "RunConfig":
        if self.patch_size < 2 or self.patch_size % 2 or 64 % self.patch_size:
            raise ConfigError(f"patch_size must be an even divisor of 64, got {self.patch_size}")
        if self.divisions not in VALID_DIVISIONS:
            raise ConfigError(f"divisions must be one of {VALID_DIVISIONS}, got {self.divisions}")
        if self.gaussian_sigma <= 0 or self.gaussian_kernel < 1 or self.gaussian_kernel % 2 == 0:
            raise ConfigError("gaussian_sigma must be > 0 and gaussian_kernel odd and positive")
        bad = [m for m in self.maps if m not in MAP_NAMES]
        if bad or not self.maps or len(set(self.maps)) != len(self.maps):
            raise ConfigError(f"maps must be distinct names from {MAP_NAMES}, got {self.maps}")
        if self.n_bits < 1:
            raise ConfigError("n_bits must be >= 1")
        if not 0 < self.t_c:
            raise ConfigError("t_c must be positive")
        if self.folds < 1:
            raise ConfigError("folds must be >= 1")
        if self.pair_ratio < 0:
            raise ConfigError("pair_ratio must be >= 0")
        if self.regularizer not in ("none", "l1", "l2"):
            raise ConfigError(f"regularizer must be none, l1 or l2, got {self.regularizer!r}")
        if self.subgroups < 1:
            raise ConfigError("subgroups must be >= 1")
        if self.mu1 <= 0 or self.mu2 <= 0 or self.gamma <= 0:
            raise ConfigError("mu1, mu2 and gamma must be positive")
        if self.instance_budget < 1 or self.epochs < 1:
            raise ConfigError("instance_budget and epochs must be >= 1")
        if not 0 < self.recall <= 1:
            raise ConfigError("recall must lie in (0, 1]")
        if self.workers < 1 or self.memory_cap_mb <= 0:
            raise ConfigError("workers must be >= 1 and memory_cap_mb positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def provenance(self) -> dict:
        return {"config_hash": self.hash(), "seed": self.seed}

    def to_yaml(self) -> str:
        d = self.to_dict()
        d["config_hash"] = self.hash()
        return yaml.safe_dump(d, sort_keys=True)

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        data = {k: v for k, v in data.items() if k != "config_hash"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _coerce(name: str, raw: str):
    value = yaml.safe_load(raw)
    if name == "maps" and isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    return value


def load_config(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        data[key] = _coerce(key, raw)
    cfg = RunConfig.from_mapping(data)
    # keep float fields float so the hash does not depend on how a number was typed
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(f.default, float) and isinstance(v, int) and not isinstance(v, bool):
            setattr(cfg, f.name, float(v))
    return cfg
