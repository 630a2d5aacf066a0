"""Run configuration: one structured document (YAML or JSON), flags override it."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from seal.agent import AgentConfig
from seal.schema import content_hash

BACKENDS = ("remote", "replay", "scripted")

# three sampling runs for the small pools, one for the large ones
DEFAULT_RUNS = {10: 3, 50: 3, 100: 3, 200: 1, 500: 1}

# keys that locate artifacts but do not change results
_LOCATION_KEYS = ("dataset", "cache_dir", "output_dir", "parallel", "script")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str
    agent: AgentConfig
    simulator_model: str
    judge_model: str
    pool_sizes: list[int] = field(default_factory=lambda: list(DEFAULT_RUNS))
    runs: int | dict[int, int] = field(default_factory=lambda: dict(DEFAULT_RUNS))
    base_seed: int = 0
    embed_model: str = "hashing-256"
    cache_dir: str = ".seal-cache"
    output_dir: str = "runs"
    backend: str = "remote"
    script: str | None = None
    parallel: int = 1

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {', '.join(BACKENDS)}")
        if not self.pool_sizes or any(int(s) < 1 for s in self.pool_sizes):
            raise ConfigError("pool sizes must be positive integers")
        if self.backend == "scripted" and not self.script:
            raise ConfigError("the scripted backend needs a script file")
        if self.parallel < 1:
            raise ConfigError("parallel must be at least 1")
        for size in self.pool_sizes:
            if self.runs_for(size) < 1:
                raise ConfigError("runs must be at least 1")

    def runs_for(self, size: int) -> int:
        if isinstance(self.runs, Mapping):
            return int(self.runs.get(size, self.runs.get(str(size), 1)))  # type: ignore[call-overload]
        return int(self.runs)

    def seeds_for(self, size: int) -> list[int]:
        return [self.base_seed + r for r in range(self.runs_for(size))]

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["agent"] = dataclasses.asdict(self.agent)
        if isinstance(self.runs, Mapping):
            doc["runs"] = {str(k): v for k, v in self.runs.items()}
        return doc

    def result_hash(self, dataset_hash: str) -> str:
        """Hash of everything that determines results; artifact locations excluded."""
        doc = {k: v for k, v in self.to_json().items() if k not in _LOCATION_KEYS}
        doc["dataset_hash"] = dataset_hash
        return content_hash(doc)

    @classmethod
    def from_json(cls, doc: Mapping[str, Any], base: Path | None = None) -> RunConfig:
        doc = dict(doc)
        try:
            agent = AgentConfig(**doc.pop("agent"))
            runs = doc.pop("runs", DEFAULT_RUNS)
            if isinstance(runs, Mapping):
                runs = {int(k): int(v) for k, v in runs.items()}
            cfg = cls(agent=agent, runs=runs, **doc)
        except ConfigError:
            raise
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"invalid run config: {exc}") from exc
        cfg.pool_sizes = [int(s) for s in cfg.pool_sizes]
        if base is not None:
            for key in ("dataset", "cache_dir", "output_dir", "script"):
                value = getattr(cfg, key)
                if value and not Path(value).is_absolute():
                    setattr(cfg, key, str(base / value))
        return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return RunConfig.from_json(doc, base=path.parent)
