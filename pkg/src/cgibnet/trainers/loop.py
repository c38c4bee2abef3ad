"""The training driver shared by both frameworks: metric log, checkpoints, divergence guard."""

from __future__ import annotations

import json
import math
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import torch

from ..approximators import load_checkpoint, save_checkpoint
from ..config import RunConfig
from .rollout import evaluate_policy

RUNS_ENV_VAR = "CGIB_RUNS_DIR"


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_checkpoint: Path | None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


def runs_root() -> Path:
    return Path(os.environ.get(RUNS_ENV_VAR, "runs"))


def architecture_of(cfg: RunConfig) -> dict:
    from ..traffic_env import load_map
    spec = load_map(cfg.map)
    c = cfg.comm
    return {"framework": cfg.framework, "map": cfg.map, "comm_mode": cfg.comm_mode, "num_agents": spec.num_agents,
            "obs_dim": spec.obs_dim, "bits": c.bits, "rounds": c.rounds, "embed_dim": cfg.net.embed_dim,
            "rnn_hidden_dim": cfg.net.rnn_hidden_dim, "message_formula": c.message_formula}


def make_learner(cfg: RunConfig, seed: int):
    if cfg.framework == "mappo":
        from .mappo import MappoLearner
        return MappoLearner(cfg, seed)
    if cfg.framework == "qmix":
        from .qmix import QmixLearner
        return QmixLearner(cfg, seed)
    raise ValueError(f"unknown framework {cfg.framework!r}")


@dataclass
class TrainResult:
    run_dir: Path
    metrics_path: Path
    checkpoints: list[Path] = field(default_factory=list)
    final_eval: dict | None = None

    @property
    def last_checkpoint(self) -> Path:
        return self.checkpoints[-1]


def _finite(record: dict) -> bool:
    return all(math.isfinite(v) for v in record.values() if isinstance(v, float))


def train(cfg: RunConfig, seed: int | None = None, run_dir: str | Path | None = None,
          progress=None) -> TrainResult:
    """Train one seed. Writes ``metrics.jsonl`` and ``ckpt_<iter>/`` under ``run_dir``.

    One JSON record per evaluation interval. A non-finite loss aborts the run
    with ``TrainingDiverged``; checkpoints written so far are kept.
    """
    cfg.validate()
    seed = cfg.seeds[0] if seed is None else seed
    run_dir = Path(run_dir) if run_dir is not None else runs_root() / cfg.name / f"seed_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.to_json())
    metrics_path = run_dir / "metrics.jsonl"
    result = TrainResult(run_dir, metrics_path)
    learner = make_learner(cfg, seed)
    arch = architecture_of(cfg)
    total = cfg.total_iterations
    with open(metrics_path, "w") as log:
        for it in range(1, total + 1):
            try:
                rec = learner.iteration()
            except FloatingPointError as err:
                log.write(json.dumps({"iteration": it, "diverged": str(err)}) + "\n")
                raise TrainingDiverged(f"iteration {it}: {err}",
                                       result.checkpoints[-1] if result.checkpoints else None) from err
            if not _finite(rec):
                log.write(json.dumps({"iteration": it, "diverged": "non-finite metrics"}) + "\n")
                raise TrainingDiverged(f"iteration {it}: non-finite metrics",
                                       result.checkpoints[-1] if result.checkpoints else None)
            if it % cfg.eval.interval == 0 or it == total:
                ev = evaluate_policy(learner.agent, cfg.map, cfg.eval.episodes)
                record = {"iteration": it, "return_mean": ev["return_mean"], "return_std": ev["return_std"],
                          "scr": ev["scr_per_round"][0], "scr_per_round": ev["scr_per_round"],
                          "sib": rec.get("sib_term"), "xib": rec.get("xib_term"),
                          "loss": {k: v for k, v in rec.items() if k not in ("sib_term", "xib_term")}}
                log.write(json.dumps(record, sort_keys=True) + "\n")
                log.flush()
                ckpt = run_dir / f"ckpt_{it}"
                save_checkpoint(ckpt, learner.modules(), arch, seed, extra={"iteration": it,
                                                                           "config": cfg.to_dict()})
                result.checkpoints.append(ckpt)
                while len(result.checkpoints) > cfg.eval.keep_checkpoints:
                    shutil.rmtree(result.checkpoints.pop(0), ignore_errors=True)
                if progress is not None:
                    progress(record)
    return result


def load_agent(checkpoint: str | Path, cfg: RunConfig | None = None):
    """Rebuild the agent network stored in a checkpoint (config read from its manifest if not given)."""
    from ..approximators import read_manifest
    manifest = read_manifest(checkpoint)
    if cfg is None:
        cfg = RunConfig.from_dict(manifest["extra"]["config"])
    learner = make_learner(cfg, 0)
    load_checkpoint(checkpoint, learner.modules(), architecture_of(cfg))
    return learner.agent, cfg
