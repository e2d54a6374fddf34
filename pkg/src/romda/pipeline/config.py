"""Pipeline configuration: a single JSON document with dotted-key CLI overrides."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from romda.adapt import RetrainMode
from romda.errors import ConfigError, ContractError
from romda.rom.model import RomHyper
from romda.synthflow import FlowConfig

_ROM_DEFAULTS = {f.name: f.default for f in fields(RomHyper) if f.name != "m"}


@dataclass
class SeedConfig:
    init: int = 0
    train: int = 1
    forecast: int = 2
    observe: int = 3
    finetune: int = 4
    ks: int = 5


@dataclass
class RetrainConfig:
    variant: str = "vae_only_da"
    epochs: int = 30
    lr: float = 5e-4


@dataclass
class PipelineConfig:
    flow: dict = field(default_factory=lambda: asdict(FlowConfig(xi=110.0)))
    rom: dict = field(default_factory=lambda: {k: (list(v) if isinstance(v, tuple) else v)
                                               for k, v in _ROM_DEFAULTS.items()})
    xi_train: list = field(default_factory=lambda: [90.0, 120.0])
    xi_eval: list = field(default_factory=lambda: [80.0, 90.0, 100.0, 110.0, 120.0, 130.0, 140.0])
    xi_target: float = 140.0
    n_sensors: int = 16
    epsilon: float = 1e-4
    n_members: int = 32
    retrain: RetrainConfig = field(default_factory=RetrainConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    workers: int = 1

    # -------------------------------------------------------------- views
    def flow_config(self) -> FlowConfig:
        return FlowConfig(**self.flow)

    def rom_hyper(self, m: int) -> RomHyper:
        return RomHyper(m=m, **self.rom)

    def retrain_mode(self) -> RetrainMode:
        return RetrainMode(self.retrain.variant, epochs=self.retrain.epochs, lr=self.retrain.lr)

    # -------------------------------------------------------------- validation
    def validate(self) -> "PipelineConfig":
        def check(path, fn):
            try:
                fn()
            except (ContractError, TypeError, ValueError) as exc:
                raise ConfigError(path, str(exc)) from None

        check("flow", self.flow_config)
        check("rom", lambda: self.rom_hyper(2 * self.flow_config().nx * self.flow_config().ny))
        check("retrain", self.retrain_mode)
        xc = self.flow["xi_c"] if "xi_c" in self.flow else FlowConfig(xi=110.0).xi_c
        for name in ("xi_train", "xi_eval"):
            vals = getattr(self, name)
            if not vals:
                raise ConfigError(name, "must be a non-empty list")
            if any(float(v) <= xc for v in vals):
                raise ConfigError(name, f"all values must exceed the critical value {xc}")
        if float(self.xi_target) <= xc:
            raise ConfigError("xi_target", f"must exceed the critical value {xc}")
        if self.n_sensors < 1:
            raise ConfigError("n_sensors", "must be >= 1")
        if not self.epsilon > 0:
            raise ConfigError("epsilon", "must be positive")
        if self.n_members < 2:
            raise ConfigError("n_members", "must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        return self

    # -------------------------------------------------------------- (de)serialisation
    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        for key in doc:
            if key not in known:
                raise ConfigError(key, "unknown configuration key")
        base = cls()
        try:
            if "retrain" in doc:
                doc["retrain"] = RetrainConfig(**{**asdict(base.retrain), **doc["retrain"]})
            if "seeds" in doc:
                doc["seeds"] = SeedConfig(**{**asdict(base.seeds), **doc["seeds"]})
        except TypeError as exc:
            raise ConfigError("retrain/seeds", str(exc)) from None
        if "flow" in doc:
            doc["flow"] = {**base.flow, **doc["flow"]}
        if "rom" in doc:
            unknown = set(doc["rom"]) - set(_ROM_DEFAULTS)
            if unknown:
                raise ConfigError(f"rom.{sorted(unknown)[0]}", "unknown configuration key")
            doc["rom"] = {**base.rom, **doc["rom"]}
        cfg = cls(**doc)
        cfg.xi_train = [float(x) for x in cfg.xi_train]
        cfg.xi_eval = [float(x) for x in cfg.xi_eval]
        cfg.xi_target = float(cfg.xi_target)
        return cfg.validate()

    @classmethod
    def loads(cls, text: str) -> "PipelineConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.loads(Path(path).read_text())


def parse_value(text: str):
    """JSON literal if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` overrides to a nested dict (returns a new dict)."""
    doc = json.loads(json.dumps(doc))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        key, raw = item.split("=", 1)
        key = key.lstrip("-")
        parts = key.split(".")
        node = doc
        for i, part in enumerate(parts[:-1]):
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(".".join(parts[:i + 1]), "unknown configuration section")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(key, "unknown configuration key")
        node[parts[-1]] = parse_value(raw)
    return doc
