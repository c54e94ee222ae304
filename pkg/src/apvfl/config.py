"""Run configuration and named presets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .client import MODES
from .graphdata import SbmConfig


class ConfigError(ValueError):
    pass


@dataclass
class FederationConfig:
    # data: either a graph JSON file (partitioned here unless a partition
    # file is given) or an SBM spec whose blocks are the clients
    dataset: str | None = None
    partition: str | None = None
    sbm: SbmConfig | None = field(default_factory=SbmConfig)
    num_clients: int = 20
    rounds: int = 50
    local_steps: int = 2
    lr: float = 0.1
    alpha: float = 10.0
    sigma: float = 1.0
    layers: int = 2
    hidden: int = 64
    conv_width: int = 3
    seed: int = 0
    mode: str = "fedaux"
    split: tuple[float, float, float] = (0.2, 0.4, 0.4)
    out_dir: str | None = None
    apv_renormalize: bool = False
    mix_phi: bool = True
    detach_z: bool = False
    backbone: str = "gcn"
    workers: int = 1

    def validate(self) -> "FederationConfig":
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.local_steps < 1:
            raise ConfigError("local_steps must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if self.layers < 1 or self.hidden < 1:
            raise ConfigError("layers and hidden must be >= 1")
        if self.conv_width < 1 or self.conv_width % 2 == 0:
            raise ConfigError("conv_width must be a positive odd integer")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.backbone != "gcn":
            raise ConfigError("only the 'gcn' backbone is available")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigError("split must be three non-negative ratios summing to 1")
        if self.dataset is None and self.sbm is None:
            raise ConfigError("either dataset or sbm must be set")
        if self.dataset is None and self.sbm is not None and self.num_clients != self.sbm.blocks:
            raise ConfigError("with an SBM dataset the clients are its blocks: num_clients must equal sbm.blocks")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "FederationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        doc = dict(doc)
        if "sbm" in doc and doc["sbm"] is not None:
            if not isinstance(doc["sbm"], dict):
                raise ConfigError("sbm must be an object or null")
            try:
                doc["sbm"] = SbmConfig(**doc["sbm"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"sbm: {exc}") from exc
        if "dataset" in doc and doc["dataset"] is not None and "sbm" not in doc:
            doc["sbm"] = None
        if "split" in doc:
            doc["split"] = tuple(float(x) for x in doc["split"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


# T and Q per dataset family, plus the SBM similarity fixture
PRESETS: dict[str, dict] = {
    "citation-small": {"rounds": 100, "local_steps": 1},
    "large": {"rounds": 200, "local_steps": 2},
    "sbm": {"rounds": 50, "local_steps": 2},
}


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> FederationConfig:
    """Defaults, then preset, then config file, then explicit overrides."""
    doc: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        doc.update(PRESETS[preset])
    if path is not None:
        try:
            file_doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(file_doc, dict):
            raise ConfigError("config must be a JSON object")
        doc.update(file_doc)
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return FederationConfig.from_dict(doc).validate()
