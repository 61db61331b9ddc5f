"""Pipeline configuration: defaults, JSON overrides, command-line overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import InvalidInput


@dataclass
class PipelineConfig:
    # clustering / descriptors
    k: int = 8
    neighborhood: int = 4
    # embedding objective
    tau: float = 0.5
    lam: float = 1e-3
    epochs_pretrain: int = 20
    epochs_divide: int = 20
    epochs_rule: int = 20
    rounds: int = 3
    k_neighbors: int = 5
    latent_dim: int = 8
    lr: float = 2.0
    batch_size: int = 256
    momentum: float = 0.5
    spatial_connectivity: int = 8
    train_max_patches: int = 4000
    # survival
    alpha: float = 0.05
    brier_time: str = "median"
    # stain foreground proxy
    od_threshold: float = 0.15
    angle_percentile: float = 1.0
    foreground_min_od: float = 0.15
    seed: int = 0
    synth: dict = field(default_factory=dict)

    def validate(self):
        if not 0 < self.tau <= 1:
            raise InvalidInput("config: tau must lie in (0, 1]")
        if self.lam < 0:
            raise InvalidInput("config: lambda must be non-negative")
        if self.k < 2:
            raise InvalidInput("config: k must be at least 2")
        if self.neighborhood not in (4, 8) or self.spatial_connectivity not in (4, 8):
            raise InvalidInput("config: neighborhood must be 4 or 8")
        if not 0 <= self.alpha < 1:
            raise InvalidInput("config: alpha must lie in [0, 1)")
        if self.rounds < 0 or min(self.epochs_pretrain, self.epochs_divide, self.epochs_rule) < 0:
            raise InvalidInput("config: epochs and rounds must be non-negative")
        if self.brier_time != "median":
            try:
                if float(self.brier_time) <= 0:
                    raise ValueError
            except ValueError:
                raise InvalidInput("config: brier_time must be 'median' or a positive number of days") from None
        return self

    def to_dict(self) -> dict:
        return asdict(self)


_FLAG_FIELDS = {
    "seed": "seed", "k": "k", "tau": "tau", "lam": "lam", "alpha": "alpha",
    "rounds": "rounds", "neighborhood": "neighborhood", "brier_time": "brier_time",
}


def load_config(path=None, overrides=None) -> PipelineConfig:
    cfg = PipelineConfig()
    known = {f.name for f in fields(PipelineConfig)}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise InvalidInput(f"{p}: config file not found")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"{p}: invalid JSON ({exc})") from None
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        unknown = set(data) - known
        if unknown:
            raise InvalidInput(f"{p}: unknown config keys {sorted(unknown)}")
        for key, value in data.items():
            setattr(cfg, key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, _FLAG_FIELDS.get(key, key), value)
    cfg.brier_time = str(cfg.brier_time)
    return cfg.validate()
