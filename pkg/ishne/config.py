# ishne/config.py
# Run configuration: built-in defaults, optional YAML overrides, CLI flags last.

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional, Union

import yaml

from .errors import ConfigError

ACTIVATIONS = ("leaky_relu", "elu", "tanh")

# ---------------- Config defaults ----------------
DEFAULT_CFG = {
    "meta": {
        "app_name": "ISHNE",
        "version": "1.0",
    },
    "data": {
        "graph": None,
        "metapaths": "P-A-P,P-S-P",
        "target_type": None,
    },
    "model": {
        "hidden": 8,
        "heads": 8,
        "fusion_dim": 128,
        "activation_attn": "leaky_relu",
        "activation_agg": "elu",
        "influence": True,
        "dropout": 0.0,
    },
    "training": {
        "lr": 5e-3,
        "weight_decay": 5e-4,
        "epochs": 1000,
        "patience": 100,
        "seed": 0,
        "workers": 1,
        "debug_checks": False,
    },
    "split": {
        "train": 600,
        "val": 300,
    },
    "synthetic": {
        "targets": 200,
        "intermediates": 40,
        "classes": 2,
        "feature_dim": 16,
        "p_in": 0.3,
        "p_out": 0.05,
        "snr": 2.0,
        "seed": 7,
    },
    "paths": {
        "out": "runs/latest",
    },
}


def _deep_merge(base, update, trail=""):
    for key, val in update.items():
        where = f"{trail}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key '{where}' must be a mapping")
            _deep_merge(base[key], val, where + ".")
        else:
            base[key] = val
    return base


def load_config(path: Optional[Union[str, Path]] = None) -> dict:
    """Defaults, deep-merged with the YAML file at `path` when given."""
    cfg = copy.deepcopy(DEFAULT_CFG)
    if path is None:
        return cfg
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            user = yaml.safe_load(f) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"config file {path} is not valid YAML: {e}")
    if not isinstance(user, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return _deep_merge(cfg, user)


def merge_overrides(cfg: dict, overrides: dict) -> dict:
    """Apply flat `section.key` overrides; None values mean "flag not given"."""
    cfg = copy.deepcopy(cfg)
    for dotted, val in overrides.items():
        if val is None:
            continue
        section, _, key = dotted.partition(".")
        if section not in cfg or key not in cfg[section]:
            raise ConfigError(f"unknown config key '{dotted}'")
        cfg[section][key] = val
    return cfg


def dump_config(cfg: dict, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(cfg, f, sort_keys=False)


# ---------------- Typed views ----------------
@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 8
    heads: int = 8
    fusion_dim: int = 128
    lr: float = 5e-3
    weight_decay: float = 5e-4
    epochs: int = 1000
    patience: int = 100
    seed: int = 0
    activation_attn: str = "leaky_relu"
    activation_agg: str = "elu"
    influence: bool = True
    dropout: float = 0.0
    workers: int = 1
    debug_checks: bool = False

    def __post_init__(self):
        for name in ("hidden", "heads", "fusion_dim", "epochs", "patience", "workers"):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise ConfigError(f"{name} must be a positive integer, got {val!r}")
        if self.patience > self.epochs:
            raise ConfigError(
                f"patience ({self.patience}) must not exceed epochs ({self.epochs})"
            )
        # lr = 0 is accepted: it freezes the model.
        if not math.isfinite(self.lr) or self.lr < 0:
            raise ConfigError(f"lr must be finite and non-negative, got {self.lr!r}")
        if not math.isfinite(self.weight_decay) or self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout!r}")
        for name in ("activation_attn", "activation_agg"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ConfigError(
                    f"{name} must be one of {', '.join(ACTIVATIONS)}, got {getattr(self, name)!r}"
                )

    @classmethod
    def from_cfg(cls, cfg):
        m, t = cfg["model"], cfg["training"]
        return cls(
            hidden=m["hidden"],
            heads=m["heads"],
            fusion_dim=m["fusion_dim"],
            lr=float(t["lr"]),
            weight_decay=float(t["weight_decay"]),
            epochs=t["epochs"],
            patience=t["patience"],
            seed=t["seed"],
            activation_attn=m["activation_attn"],
            activation_agg=m["activation_agg"],
            influence=bool(m["influence"]),
            dropout=float(m["dropout"]),
            workers=t["workers"],
            debug_checks=bool(t["debug_checks"]),
        )

    def to_dict(self):
        return asdict(self)
