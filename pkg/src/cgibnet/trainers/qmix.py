"""QMIX with a recurrent utility network that communicates, over episode replay."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from ..approximators import MonotonicMixer
from ..config import RunConfig
from ..gib_comm import CommNoise
from ..traffic_env import NUM_ACTIONS, load_map
from .agents import CommAgent
from .common import LossBreakdown, Trajectory, make_envs
from .mappo import build_agent, masked_mean
from .rollout import collect


@dataclass
class TargetSnapshot:
    agent: CommAgent
    mixer: MonotonicMixer

    @classmethod
    def of(cls, agent: CommAgent, mixer: MonotonicMixer) -> "TargetSnapshot":
        snap = cls(copy.deepcopy(agent), copy.deepcopy(mixer))
        for p in list(snap.agent.parameters()) + list(snap.mixer.parameters()):
            p.requires_grad_(False)
        return snap

    def refresh(self, agent: CommAgent, mixer: MonotonicMixer) -> None:
        self.agent.load_state_dict(agent.state_dict())
        self.mixer.load_state_dict(mixer.state_dict())


def decentralised_greedy(q: torch.Tensor, alive: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-agent argmax and max of (..., N, A) utilities; dead agents' values are zero."""
    best, actions = q.max(-1)
    if alive is not None:
        best = best * alive.to(q.dtype)
    return actions, best


def qmix_loss(batch: dict, target: TargetSnapshot | None, gamma: float, agent: CommAgent, mixer: MonotonicMixer,
              beta_S: float = 0.0, beta_X: float = 0.0) -> LossBreakdown:
    """Squared TD error of Q_tot against ``r + gamma * (1 - done) * Q_tot^-(s', argmax_i Q_i^-)``.

    ``batch`` tensors: obs (T+1,B,N,D), alive (T+1,B,N), state (T+1,B,S),
    actions (T,B,N), rewards (T,B), dones (T,B), valid (T,B), optional
    ``noise`` (CommNoise over T+1 steps).
    """
    if target is None:
        raise ValueError("qmix_loss needs a target-network snapshot")
    T = batch["actions"].shape[0]
    alive = batch["alive"]
    out = agent.unroll(batch["obs"], alive, batch.get("noise"))
    q = out.out[:T]
    chosen = q.gather(-1, batch["actions"].unsqueeze(-1)).squeeze(-1) * alive[:T].to(q.dtype)
    q_tot = mixer(chosen, batch["state"][:T])
    with torch.no_grad():
        tq = target.agent.unroll(batch["obs"], alive, batch.get("noise")).out[1:]
        _, best = decentralised_greedy(tq, alive[1:])
        next_tot = target.mixer(best, batch["state"][1:])
        y = batch["rewards"] + gamma * (1.0 - batch["dones"].to(q.dtype)) * next_tot
    td_loss = masked_mean((q_tot - y) ** 2, batch["valid"])
    sib = masked_mean(out.sib[:T], batch["valid"])
    xib = masked_mean(out.xib[:T], batch["valid"])
    return LossBreakdown(td_loss, sib, xib, beta_S, beta_X,
                         extras={"q_tot_mean": float(masked_mean(q_tot.detach(), batch["valid"]))})


class EpisodeBuffer:
    """Ring buffer of whole episodes (with their communication noise)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items: list[dict] = []
        self.pos = 0

    def __len__(self) -> int:
        return len(self.items)

    def add_batch(self, traj: Trajectory) -> None:
        for e in range(traj.num_envs):
            ep = {"obs": traj.obs[:, e], "alive": traj.alive[:, e], "state": traj.state[:, e],
                  "actions": traj.actions[:, e], "rewards": traj.rewards[:, e], "dones": traj.dones[:, e],
                  "valid": traj.valid[:, e]}
            if traj.noise_u is not None:
                ep["noise_u"], ep["noise_eps"] = traj.noise_u[:, e], traj.noise_eps[:, e]
            if len(self.items) < self.capacity:
                self.items.append(ep)
            else:
                self.items[self.pos] = ep
            self.pos = (self.pos + 1) % self.capacity

    def sample(self, size: int, rng: np.random.Generator, dtype=torch.float32) -> dict:
        idx = rng.choice(len(self.items), size=min(size, len(self.items)), replace=False)
        eps = [self.items[i] for i in idx]

        def stack(key, dt=dtype):
            return torch.as_tensor(np.stack([e[key] for e in eps], axis=1), dtype=dt)
        batch = {"obs": stack("obs"), "alive": stack("alive", torch.bool), "state": stack("state"),
                 "actions": stack("actions", torch.long), "rewards": stack("rewards"),
                 "dones": stack("dones", torch.bool), "valid": stack("valid", torch.bool)}
        if "noise_u" in eps[0]:
            batch["noise"] = CommNoise(stack("noise_u"), stack("noise_eps"))
        return batch


def epsilon_at(episodes: int, total_episodes: int, start: float, finish: float, fraction: float) -> float:
    horizon = max(1.0, fraction * total_episodes)
    return max(finish, start - (start - finish) * episodes / horizon)


class QmixLearner:
    framework = "qmix"

    def __init__(self, cfg: RunConfig, seed: int):
        self.cfg = cfg
        self.spec = load_map(cfg.map)
        torch.manual_seed(seed)
        self.rng = np.random.default_rng(seed)
        self.gen = torch.Generator().manual_seed(seed)
        self.agent = build_agent(cfg, self.spec, NUM_ACTIONS)
        self.mixer = MonotonicMixer(self.spec.num_agents, self.spec.state_dim, cfg.net.mixer_hidden_dim,
                                    cfg.net.hypernet_hidden_dim)
        self.target = TargetSnapshot.of(self.agent, self.mixer)
        self.params = list(self.agent.parameters()) + list(self.mixer.parameters())
        self.opt = torch.optim.Adam(self.params, lr=cfg.qmix.lr)
        self.buffer = EpisodeBuffer(cfg.qmix.buffer_episodes)
        self.envs = make_envs(cfg.map, cfg.qmix.envs_per_iteration)
        self.episodes = 0
        self.updates = 0
        self.total_episodes = cfg.total_iterations * cfg.qmix.envs_per_iteration

    def modules(self) -> dict[str, nn.Module]:
        return {"agent": self.agent, "mixer": self.mixer}

    def _act(self, epsilon: float):
        def act(out, alive, t):
            greedy = out.out.argmax(-1)
            shape = greedy.shape
            explore = torch.rand(shape, generator=self.gen) < epsilon
            random = torch.randint(NUM_ACTIONS, shape, generator=self.gen)
            return torch.where(explore, random, greedy), None
        return act

    def iteration(self) -> dict:
        q = self.cfg.qmix
        eps = epsilon_at(self.episodes, self.total_episodes, q.epsilon_start, q.epsilon_finish,
                         q.epsilon_anneal_fraction)
        seeds = self.rng.integers(2 ** 31, size=len(self.envs))
        traj = collect(self.agent, self.envs, seeds, self._act(eps), self.gen)
        self.buffer.add_batch(traj)
        self.episodes += len(self.envs)
        record = {"train_return": float(traj.episode_returns().mean()), "epsilon": eps}
        if len(self.buffer) < q.batch_size:
            return record
        # one gradient update per collected episode
        for _ in range(len(self.envs)):
            batch = self.buffer.sample(q.batch_size, self.rng, self.agent.head.weight.dtype)
            loss = qmix_loss(batch, self.target, self.cfg.gamma, self.agent, self.mixer,
                             self.cfg.comm.beta_S, self.cfg.comm.beta_X)
            if not torch.isfinite(loss.total):
                raise FloatingPointError("non-finite QMIX loss")
            self.opt.zero_grad()
            loss.total.backward()
            nn.utils.clip_grad_norm_(self.params, q.max_grad_norm)
            self.opt.step()
            self.updates += 1
            if self.updates % q.target_update_interval == 0:
                self.target.refresh(self.agent, self.mixer)
        record.update(loss.as_dict())
        return record
