"""Multi-seed experiment runs: train, evaluation battery, manifest."""

from __future__ import annotations

import json
import time
import traceback
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from ..bandwidth_eval import (build_budget, calibrate, confusion_from_trace, dump_confusion, evaluate_agent)
from ..config import RunConfig
from ..trainers.loop import load_agent, runs_root, train

MANIFEST = "manifest.json"


def code_version() -> str:
    try:
        return metadata.version("cgibnet")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class RunManifest:
    name: str
    config_hash: str
    code_version: str
    seeds: list[int]
    message_formula: str  # "conventional" (mu + sigma*eps) or "printed" (mu*eps + sigma)
    started: float
    finished: float | None = None
    status: str = "running"
    error: str | None = None
    config: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)  # seed -> {metrics, checkpoint, report}
    reports: dict = field(default_factory=dict)  # seed -> evaluation battery

    @property
    def complete(self) -> bool:
        return self.status == "complete"

    def write(self, run_dir: Path) -> Path:
        path = run_dir / MANIFEST
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return path

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST
        data = json.loads(path.read_text())
        return cls(**data)

    def run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config)


def evaluation_battery(checkpoint: Path, cfg: RunConfig, episodes: int | None = None,
                       out_dir: Path | None = None) -> dict:
    """Unconstrained evaluation plus one run per MCR target in ``cfg.eval.mcr_battery``.

    Budgets come from a calibration pass on separate seeds (episode-mean KL
    ranking, aggregated eval-mode structure).
    """
    episodes = episodes or cfg.eval.final_episodes
    agent, _ = load_agent(checkpoint, cfg)
    trace: list = []
    from ..trainers.rollout import evaluate_policy
    base = evaluate_agent(agent, cfg.map, None, episodes)
    battery = {"episodes": episodes, "mcr_0": _summary(base)}
    if agent.comm is None:
        for target in cfg.eval.mcr_battery:
            battery[f"mcr_{target:g}"] = _summary(base)
        return battery
    ledger, structure = calibrate(agent, cfg.map, episodes=cfg.eval.episodes)
    battery["bit_kl"] = ledger.last_round_bits.tolist()
    for target in cfg.eval.mcr_battery:
        budget = build_budget(ledger, structure, target, cfg.eval.mask_strategy)
        rec = evaluate_agent(agent, cfg.map, budget, episodes)
        battery[f"mcr_{target:g}"] = {**_summary(rec), "budget": budget.to_dict()}
    if out_dir is not None:
        evaluate_policy(agent, cfg.map, 1, trace=trace)
        step = int(np.argmax([int(alive.sum()) for _, alive in trace]))
        bits = agent.comm_config.bits
        dump_confusion(confusion_from_trace(trace, step, 0, bits), out_dir / "confusion_mcr0.json", step=step,
                       mcr=0.0)
        if 0.75 in cfg.eval.mcr_battery:
            mask = np.array(battery["mcr_0.75"]["budget"]["mask"], dtype=bool)
            dump_confusion(confusion_from_trace(trace, step, 0, bits, mask), out_dir / "confusion_mcr75.json",
                           step=step, mcr=0.75)
    return battery


def _summary(rec: dict) -> dict:
    out = {"return_mean": rec["return_mean"], "return_std": rec["return_std"]}
    if rec.get("report") is not None:
        out["report"] = rec["report"].to_dict()
    return out


def run_experiment(cfg: RunConfig, root: str | Path | None = None, reuse: bool = True,
                   progress=None) -> RunManifest:
    """Train every seed, run the evaluation battery and write ``<root>/<name>/manifest.json``.

    A finished manifest with the same config hash is returned as is when
    ``reuse`` is set. Failures mark the manifest ``failed`` and keep partial
    artifacts.
    """
    cfg.validate()
    run_dir = Path(root) if root is not None else runs_root()
    run_dir = run_dir / cfg.name
    run_dir.mkdir(parents=True, exist_ok=True)
    if reuse and (run_dir / MANIFEST).exists():
        old = RunManifest.read(run_dir)
        if old.complete and old.config_hash == cfg.config_hash():
            return old
    manifest = RunManifest(name=cfg.name, config_hash=cfg.config_hash(), code_version=code_version(),
                           seeds=list(cfg.seeds), message_formula=cfg.comm.message_formula, started=time.time(),
                           config=cfg.to_dict())
    manifest.write(run_dir)
    try:
        for seed in cfg.seeds:
            seed_dir = run_dir / f"seed_{seed}"
            result = train(cfg, seed, seed_dir, progress=progress)
            battery = evaluation_battery(result.last_checkpoint, cfg, out_dir=seed_dir)
            (seed_dir / "report.json").write_text(json.dumps(battery, indent=2, sort_keys=True))
            manifest.artifacts[str(seed)] = {"metrics": str(result.metrics_path),
                                             "checkpoint": str(result.last_checkpoint),
                                             "report": str(seed_dir / "report.json")}
            manifest.reports[str(seed)] = battery
            manifest.write(run_dir)
    except Exception as err:  # keep partial artifacts, record the failure
        manifest.status = "failed"
        manifest.error = "".join(traceback.format_exception_only(type(err), err)).strip()
        manifest.finished = time.time()
        manifest.write(run_dir)
        return manifest
    manifest.status = "complete"
    manifest.finished = time.time()
    manifest.write(run_dir)
    return manifest
