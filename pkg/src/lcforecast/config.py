"""Run configuration: one JSON file drives every CLI subcommand."""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ValidationError
from .seqnet import NetworkConfig
from .synthgen import ScenarioConfig

WORKFLOWS = ("e2e", "multi-l")


@dataclass
class Seeds:
    data: int = 0
    init: int = 0
    train: int = 0
    importance: int = 0


@dataclass
class RunConfig:
    data_dir: str = "data"
    output_dir: str = "out"
    horizon_s: float = 1.0
    workflow: str = "e2e"
    split_mode: str = "by-track"
    balance_before_split: bool = True
    precision: int = 64
    recordings: int = 1
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    seeds: Seeds = field(default_factory=Seeds)

    def __post_init__(self):
        if self.workflow not in WORKFLOWS:
            raise ValidationError(f"workflow must be one of {WORKFLOWS}, got {self.workflow!r}")
        if self.split_mode not in ("by-track", "by-sample"):
            raise ValidationError(f"unknown split mode {self.split_mode!r}")
        if not self.horizon_s > 0:
            raise ValidationError("horizon_s must be positive")
        if self.precision not in (32, 64):
            raise ValidationError("precision must be 32 or 64")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        scenario = ScenarioConfig.from_dict(d.pop("scenario", {}))
        network = NetworkConfig(**d.pop("network", {}))
        seeds = Seeds(**d.pop("seeds", {}))
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(scenario=scenario, network=network, seeds=seeds, **d)

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise ValidationError(f"{path}: invalid JSON ({err})") from None
        return cls.from_dict(data)

    def to_dict(self):
        d = asdict(self)
        d["scenario"] = self.scenario.to_dict()
        return d

    def network_config(self):
        """Network settings with the run's init/train seeds applied."""
        return self.network.replace(init_seed=self.seeds.init, train_seed=self.seeds.train)

    def config_hash(self):
        """Digest of everything except filesystem paths."""
        d = self.to_dict()
        d.pop("data_dir")
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def provenance(self):
        return {"configHash": self.config_hash(), "seeds": asdict(self.seeds)}
