"""Engine configuration: thresholds, scoring and spending-model settings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .behavior import ScoreConfig
from .cascade import POLICIES, ConfigError, Thresholds
from .store import HmmConfig


@dataclass(frozen=True)
class EngineConfig:
    thresholds: Thresholds = field(default_factory=Thresholds)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    hmm: HmmConfig = field(default_factory=HmmConfig)
    policy: str = "hybrid"

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = [self.thresholds.t1, self.thresholds.t2]
        d["score"]["weights"] = dict(self.score.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            t = d.get("thresholds", [25.0, 75.0])
            thresholds = Thresholds(**t) if isinstance(t, dict) else Thresholds(*t)
            return cls(
                thresholds=thresholds,
                score=ScoreConfig(**d.get("score", {})),
                hmm=HmmConfig(**d.get("hmm", {})),
                policy=d.get("policy", "hybrid"),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, t1=None, t2=None, theta=None, policy=None, window_len=None) -> "EngineConfig":
        cfg = self
        if t1 is not None or t2 is not None:
            cfg = replace(
                cfg,
                thresholds=Thresholds(
                    cfg.thresholds.t1 if t1 is None else t1,
                    cfg.thresholds.t2 if t2 is None else t2,
                ),
            )
        if theta is not None:
            cfg = replace(cfg, hmm=replace(cfg.hmm, theta=theta))
        if window_len is not None:
            cfg = replace(cfg, score=replace(cfg.score, window_len=window_len))
        if policy is not None:
            cfg = replace(cfg, policy=policy)
        return cfg


def load_config(path: str | Path | None) -> EngineConfig:
    if path is None:
        return EngineConfig()
    try:
        return EngineConfig.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
