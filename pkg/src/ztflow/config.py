"""Pipeline configuration: one JSON file plus flag overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .arl import ArlConfig
from .rtfsl import RtfslConfig


class ConfigError(ValueError):
    """Invalid configuration or missing input files (exit code 2)."""


@dataclass
class MiningConfig:
    min_support: float = 0.9
    min_confidence: float = 1.0
    window_duration: float = 1.0
    idle_timeout: float = 10.0

    def __post_init__(self):
        if not (0 < self.min_support <= 1):
            raise ConfigError("mining.min_support must be in (0, 1]")
        if not (0 < self.min_confidence <= 1):
            raise ConfigError("mining.min_confidence must be in (0, 1]")
        if self.window_duration <= 0:
            raise ConfigError("mining.window_duration must be positive")


@dataclass
class PipelineConfig:
    seed: int = 0
    traces: list[str] = field(default_factory=list)
    app_mapping: Optional[str] = None
    model_dir: str = "models"
    output_dir: str = "out"
    sim_spec: Optional[str] = None
    flow_stats_dir: Optional[str] = None
    arl: ArlConfig = field(default_factory=ArlConfig)
    rtfsl: RtfslConfig = field(default_factory=RtfslConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        paths = doc.pop("paths", {})
        try:
            arl = ArlConfig(**doc.pop("arl", {}))
            rtfsl = RtfslConfig(**doc.pop("rtfsl", {}))
            mining = MiningConfig(**doc.pop("mining", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc))
        known = {"seed"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            seed=int(doc.get("seed", 0)),
            traces=list(paths.get("traces", [])),
            app_mapping=paths.get("app_mapping"),
            model_dir=paths.get("model_dir", "models"),
            output_dir=paths.get("output_dir", "out"),
            sim_spec=paths.get("sim_spec"),
            flow_stats_dir=paths.get("flow_stats_dir"),
            arl=arl, rtfsl=rtfsl, mining=mining,
        )

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        cfg = cls.from_dict(doc)
        # relative paths resolve against the config file's directory
        base = p.parent
        cfg.traces = [str((base / t)) if not Path(t).is_absolute() else t
                      for t in cfg.traces]
        for attr in ("app_mapping", "model_dir", "output_dir", "sim_spec",
                     "flow_stats_dir"):
            value = getattr(cfg, attr)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, attr, str(base / value))
        return cfg

    def apply_overrides(self, pairs: list[str]) -> None:
        """Apply ``section.key=value`` overrides (values parsed as JSON)."""
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override must be key=value: {pair!r}")
            dotted, raw = pair.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            parts = dotted.split(".")
            target = self
            for part in parts[:-1]:
                if not hasattr(target, part):
                    raise ConfigError(f"unknown config section {part!r}")
                target = getattr(target, part)
            leaf = parts[-1]
            if not any(f.name == leaf for f in fields(target)):
                raise ConfigError(f"unknown config key {dotted!r}")
            setattr(target, leaf, value)

    def require_traces(self) -> None:
        if not self.traces:
            raise ConfigError("no trace files configured (paths.traces)")
        missing = [t for t in self.traces if not Path(t).is_file()]
        if missing:
            raise ConfigError(f"trace files not found: {missing}")
        if self.app_mapping is not None and not Path(self.app_mapping).is_file():
            raise ConfigError(f"app-mapping file not found: {self.app_mapping}")

    def require_sim_spec(self) -> dict:
        if not self.sim_spec:
            raise ConfigError("no simulator spec configured (paths.sim_spec)")
        p = Path(self.sim_spec)
        if not p.is_file():
            raise ConfigError(f"simulator spec not found: {self.sim_spec}")
        try:
            return json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"simulator spec is not valid JSON: {exc}")
