"""Training configuration and its key-value file form."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

import yaml

from .losses import LossWeights
from .posenc import PosEncConfig


@dataclass
class TrainConfig:
    # optimisation (500 epochs, lr 1e-4, batch 256, AdamW)
    epochs: int = 500
    lr: float = 1e-4
    batch_size: int = 256
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # losses
    temperature: float = 0.07
    w_lc: float = 1.0
    w_region: float = 1.0
    w_con: float = 1.0
    con_reduction: str = "sum"
    # architecture (hidden 256, PE head 128-256-128)
    hidden: int = 256
    pe_hidden: int = 256
    dropout: float = 0.5
    pe_dropout: float = 0.5
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    # positional encoding
    pe_dim: int = 64
    pe_base: float = 1e4
    coord_scale: float = 1.0
    # ablation switches
    use_latlon: bool = True
    learned_pe: bool = True
    use_region: bool = True
    # data
    train_ratio: float = 0.75
    stratified: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm)")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.learned_pe and not self.use_latlon:
            raise ValueError("learned_pe requires use_latlon")
        if self.hidden < 1 or self.pe_hidden < 1:
            raise ValueError("layer widths must be positive")
        if self.con_reduction not in ("sum", "mean"):
            raise ValueError("con_reduction must be 'sum' or 'mean'")
        if not 0 < self.train_ratio < 1:
            raise ValueError("train_ratio must lie in (0, 1)")
        PosEncConfig(self.pe_dim, self.pe_base, self.coord_scale)

    @property
    def posenc(self) -> PosEncConfig:
        return PosEncConfig(self.pe_dim, self.pe_base, self.coord_scale)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_lc, self.w_region, self.w_con)

    @property
    def pe_width(self) -> int:
        return 2 * self.pe_dim if self.use_latlon else 0

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: coerce(known[k], v) for k, v in d.items()})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def coerce(f: dataclasses.Field, value):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if kind == "bool":
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{f.name}: expected a boolean, got {value!r}")
    if kind == "int":
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"{f.name}: expected an integer, got {value!r}")
        return int(value)
    if kind == "float":
        return float(value)
    return str(value)


def read_config_file(path) -> dict:
    """Flat ``key: value`` YAML mapping; returns the raw dict."""
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a key-value mapping")
    return data
