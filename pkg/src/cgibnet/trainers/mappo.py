"""MAPPO with a shared recurrent actor, a centralised critic and communication."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from ..approximators import mlp
from ..config import RunConfig
from ..gib_comm import CommNoise
from ..traffic_env import NUM_ACTIONS, load_map
from .agents import CommAgent
from .common import LossBreakdown, Trajectory, ValueNorm, batch_size_to_envs, compute_advantages, make_envs
from .rollout import collect, sample_act


def clipped_surrogate(ratio: torch.Tensor, adv: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Per-sample ``min(rho * A, clip(rho, 1-eps, 1+eps) * A)``."""
    return torch.min(ratio * adv, ratio.clamp(1 - epsilon, 1 + epsilon) * adv)


def check_ratio(ratio: torch.Tensor) -> None:
    bad = ~torch.isfinite(ratio)
    if bool(bad.any()):
        idx = tuple(int(i) for i in torch.nonzero(bad)[0])
        raise FloatingPointError(f"non-finite importance ratio at sample {idx}")


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    mask = mask.to(x.dtype)
    return (x * mask).sum() / mask.sum().clamp_min(1.0)


class Critic(nn.Module):
    def __init__(self, state_dim: int, hidden_dim: int = 32):
        super().__init__()
        self.net = mlp([state_dim, hidden_dim, hidden_dim, 1])

    def forward(self, state: torch.Tensor) -> torch.Tensor:
        return self.net(state)


def build_agent(cfg: RunConfig, spec, out_dim: int = NUM_ACTIONS) -> CommAgent:
    from ..gib_comm import CommConfig
    c = cfg.comm
    comm_cfg = CommConfig(num_agents=spec.num_agents, bits=c.bits, rounds=c.rounds, temperature=c.tau,
                          beta_S=c.beta_S, beta_X=c.beta_X, mode=cfg.comm_mode,
                          message_formula=c.message_formula, hidden_dim=c.hidden_dim,
                          edge_init_bias=c.edge_init_bias)
    return CommAgent(spec.obs_dim, out_dim, comm_cfg, cfg.net.embed_dim, cfg.net.rnn_hidden_dim)


def mappo_loss(batch: dict, epsilon: float, policy: CommAgent, critic: Critic, beta_S: float = 0.0,
               beta_X: float = 0.0, value_coef: float = 0.5, entropy_coef: float = 0.01) -> LossBreakdown:
    """Clipped PPO objective plus critic regression, entropy bonus and the IB terms.

    ``batch`` holds tensors: obs (T,E,N,D), alive (T,E,N), state (T,E,S),
    actions (T,E,N), old_log_probs (T,E,N), advantages (T,E), value_targets
    (T,E) in critic units, valid (T,E) and optionally ``noise`` (CommNoise).
    """
    if "old_log_probs" not in batch:
        raise ValueError("batch needs behaviour-policy log-probabilities")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    out = policy.unroll(batch["obs"], batch["alive"], batch.get("noise"))
    dist = torch.distributions.Categorical(logits=out.out)
    log_probs = dist.log_prob(batch["actions"])
    act_mask = batch["valid"].unsqueeze(-1) & batch["alive"]
    ratio = torch.exp(log_probs - batch["old_log_probs"])
    check_ratio(torch.where(act_mask, ratio, torch.ones_like(ratio)))
    adv = batch["advantages"].unsqueeze(-1).expand_as(ratio)
    policy_loss = -masked_mean(clipped_surrogate(ratio, adv, epsilon), act_mask)
    entropy = masked_mean(dist.entropy(), act_mask)
    values = critic(batch["state"]).squeeze(-1)
    value_loss = masked_mean((values - batch["value_targets"]) ** 2, batch["valid"])
    task = policy_loss + value_coef * value_loss - entropy_coef * entropy
    sib = masked_mean(out.sib, batch["valid"])
    xib = masked_mean(out.xib, batch["valid"])
    with torch.no_grad():
        clip_frac = masked_mean(((ratio - 1).abs() > epsilon).to(ratio.dtype), act_mask)
    return LossBreakdown(task, sib, xib, beta_S, beta_X, extras={
        "policy_loss": policy_loss.item(), "value_loss": value_loss.item(), "entropy": entropy.item(),
        "clip_frac": clip_frac.item()})


class MappoLearner:
    framework = "mappo"

    def __init__(self, cfg: RunConfig, seed: int):
        self.cfg = cfg
        self.spec = load_map(cfg.map)
        torch.manual_seed(seed)
        self.rng = np.random.default_rng(seed)
        self.gen = torch.Generator().manual_seed(seed)
        self.agent = build_agent(cfg, self.spec)
        self.critic = Critic(self.spec.state_dim, cfg.net.critic_hidden_dim)
        m = cfg.mappo
        self.actor_opt = torch.optim.RMSprop(self.agent.parameters(), lr=m.actor_lr, alpha=m.rmsprop_alpha,
                                             eps=m.rmsprop_eps)
        self.critic_opt = torch.optim.RMSprop(self.critic.parameters(), lr=m.critic_lr, alpha=m.rmsprop_alpha,
                                              eps=m.rmsprop_eps)
        self.value_norm = ValueNorm()
        self.envs = make_envs(cfg.map, batch_size_to_envs(m.batch_size, self.spec.max_steps))
        self.act = sample_act(self.gen)

    def modules(self) -> dict[str, nn.Module]:
        return {"agent": self.agent, "critic": self.critic}

    def _values(self, state: torch.Tensor) -> torch.Tensor:
        return torch.as_tensor(self.value_norm.denormalize(self.critic(state).squeeze(-1)))

    def iteration(self) -> dict:
        cfg, m = self.cfg, self.cfg.mappo
        seeds = self.rng.integers(2 ** 31, size=len(self.envs))
        traj = collect(self.agent, self.envs, seeds, self.act, self.gen,
                       critic=lambda s: self._values(s).unsqueeze(-1))
        adv, returns = compute_advantages(traj.rewards, traj.values, traj.dones, traj.valid, cfg.gamma,
                                          m.gae_lambda)
        self.value_norm.update(returns[traj.valid])
        batch = self.to_batch(traj, adv, self.value_norm.normalize(returns))
        last = None
        for _ in range(m.ppo_epochs):
            loss = mappo_loss(batch, m.epsilon_clip, self.agent, self.critic, cfg.comm.beta_S, cfg.comm.beta_X,
                              m.value_coef, m.entropy_coef)
            if not torch.isfinite(loss.total):
                raise FloatingPointError("non-finite MAPPO loss")
            self.actor_opt.zero_grad()
            self.critic_opt.zero_grad()
            loss.total.backward()
            nn.utils.clip_grad_norm_(self.agent.parameters(), m.max_grad_norm)
            nn.utils.clip_grad_norm_(self.critic.parameters(), m.max_grad_norm)
            self.actor_opt.step()
            self.critic_opt.step()
            last = loss
        return {"train_return": float(traj.episode_returns().mean()), **last.as_dict(),
                "train_scr": _scr(traj)}

    def to_batch(self, traj: Trajectory, adv: np.ndarray, targets: np.ndarray) -> dict:
        dtype = self.agent.head.weight.dtype
        T = traj.length

        def f(x):
            return torch.as_tensor(x, dtype=dtype)
        batch = {
            "obs": f(traj.obs[:T]), "alive": torch.as_tensor(traj.alive[:T]), "state": f(traj.state[:T]),
            "actions": torch.as_tensor(traj.actions), "old_log_probs": f(traj.log_probs),
            "advantages": f(adv), "value_targets": f(targets), "valid": torch.as_tensor(traj.valid),
        }
        if traj.noise_u is not None:
            batch["noise"] = CommNoise(f(traj.noise_u[:T]), f(traj.noise_eps[:T]))
        return batch


def _scr(traj: Trajectory) -> float:
    complete = (traj.edges_complete * traj.valid).sum()
    if complete == 0:
        return 0.0
    kept = (traj.edges_kept[..., 0] * traj.valid).sum()
    return float((complete - kept) / complete)
