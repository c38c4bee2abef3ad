"""Run configuration: one nested record holding every hyperparameter.

Configs serialise to JSON with one section per component. Values are resolved
with the precedence command-line override > config file > defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

FRAMEWORKS = ("mappo", "qmix")
MAPS = ("easy", "medium", "hard")
COMM_MODES = ("cgibnet", "full", "none")
MASK_STRATEGIES = ("kl_rank", "abs_value")

BETA_S_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)
BETA_X_GRID = (0.0005, 0.001, 0.005, 0.01)
MAPPO_ITERATIONS = {"easy": 3000, "medium": 3000, "hard": 10000}
QMIX_EPISODES = 3000


@dataclass
class CommSettings:
    beta_S: float = 0.1
    beta_X: float = 0.001
    tau: float = 1.0
    bits: int = 5
    rounds: int = 1
    message_formula: str = "conventional"
    hidden_dim: int = 64
    edge_init_bias: float = 0.0


@dataclass
class NetworkSettings:
    embed_dim: int = 64
    rnn_hidden_dim: int = 64
    critic_hidden_dim: int = 32
    mixer_hidden_dim: int = 32
    hypernet_hidden_dim: int = 64


@dataclass
class MappoSettings:
    actor_lr: float = 1e-3
    critic_lr: float = 3e-3
    batch_size: int = 500
    ppo_epochs: int = 5
    epsilon_clip: float = 0.2
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 10.0
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 1e-5


@dataclass
class QmixSettings:
    lr: float = 1e-3
    batch_size: int = 64
    buffer_episodes: int = 5000
    target_update_interval: int = 200
    epsilon_start: float = 1.0
    epsilon_finish: float = 0.05
    epsilon_anneal_fraction: float = 0.2
    envs_per_iteration: int = 4
    max_grad_norm: float = 10.0


@dataclass
class EvalSettings:
    interval: int = 100
    episodes: int = 20
    final_episodes: int = 100
    mcr_battery: tuple[float, ...] = (0.5, 0.75, 1.0)
    mask_strategy: str = "kl_rank"
    keep_checkpoints: int = 2


@dataclass
class RunConfig:
    name: str = "run"
    framework: str = "mappo"
    map: str = "easy"
    comm_mode: str = "cgibnet"
    gamma: float = 0.99
    # MAPPO: rollout batches. QMIX: collection rounds of qmix.envs_per_iteration episodes,
    # each followed by one gradient update per collected episode.
    iterations: int | None = None
    seeds: tuple[int, ...] = (0,)
    comm: CommSettings = field(default_factory=CommSettings)
    net: NetworkSettings = field(default_factory=NetworkSettings)
    mappo: MappoSettings = field(default_factory=MappoSettings)
    qmix: QmixSettings = field(default_factory=QmixSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    @property
    def total_iterations(self) -> int:
        if self.iterations is not None:
            return self.iterations
        if self.framework == "qmix":
            return max(1, QMIX_EPISODES // self.qmix.envs_per_iteration)
        return MAPPO_ITERATIONS[self.map]

    def validate(self) -> "RunConfig":
        bad = []
        if self.framework not in FRAMEWORKS:
            bad.append("framework")
        if self.map not in MAPS:
            bad.append("map")
        if self.comm_mode not in COMM_MODES:
            bad.append("comm_mode")
        if not 0 <= self.gamma <= 1:
            bad.append("gamma")
        if self.iterations is not None and self.iterations < 1:
            bad.append("iterations")
        if not self.seeds:
            bad.append("seeds")
        c = self.comm
        if c.beta_S < 0:
            bad.append("comm.beta_S")
        if c.beta_X < 0:
            bad.append("comm.beta_X")
        if not c.tau > 0:
            bad.append("comm.tau")
        if c.bits < 1:
            bad.append("comm.bits")
        if c.rounds < 1:
            bad.append("comm.rounds")
        if c.message_formula not in ("conventional", "printed"):
            bad.append("comm.message_formula")
        if not self.mappo.epsilon_clip > 0:
            bad.append("mappo.epsilon_clip")
        if not 0 <= self.mappo.gae_lambda <= 1:
            bad.append("mappo.gae_lambda")
        for key in ("actor_lr", "critic_lr", "batch_size", "ppo_epochs"):
            if not getattr(self.mappo, key) > 0:
                bad.append(f"mappo.{key}")
        for key in ("lr", "batch_size", "buffer_episodes", "target_update_interval", "envs_per_iteration"):
            if not getattr(self.qmix, key) > 0:
                bad.append(f"qmix.{key}")
        if self.eval.mask_strategy not in MASK_STRATEGIES:
            bad.append("eval.mask_strategy")
        if any(not 0 <= m <= 1 for m in self.eval.mcr_battery):
            bad.append("eval.mcr_battery")
        if self.eval.interval < 1 or self.eval.episodes < 1 or self.eval.final_episodes < 1:
            bad.append("eval")
        if bad:
            raise ConfigError(bad)
        return self

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("name", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        """Apply dotted-key overrides such as ``{"comm.beta_S": 0.5}``."""
        data = self.to_dict()
        for key, value in overrides.items():
            node = data
            *path, leaf = key.split(".")
            for p in path:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError([key])
                node = node[p]
            if leaf not in node:
                raise ConfigError([key])
            node[leaf] = value
        return RunConfig.from_dict(data)


class ConfigError(ValueError):
    def __init__(self, keys):
        self.keys = list(keys)
        super().__init__("invalid configuration keys: " + ", ".join(self.keys))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError([prefix.rstrip(".") or "<root>"])
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = [prefix + k for k in data if k not in fields]
    if unknown:
        raise ConfigError(unknown)
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        elif isinstance(default, tuple) or name == "seeds":
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = RunConfig.from_json(Path(path).read_text())
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg.validate()
