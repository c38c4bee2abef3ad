"""Lock-step episode collection over a batch of environments."""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch

from ..traffic_env import EnvStep, TrafficJunction
from .agents import AgentOutput, CommAgent
from .common import Trajectory

# act(out, alive, t) -> (actions (E, N) long tensor, per-agent log-probs or None)
ActFn = Callable[[AgentOutput, torch.Tensor, int], tuple[torch.Tensor, torch.Tensor | None]]


def _stack_steps(steps: list[EnvStep | None], spec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, d = spec.num_agents, spec.obs_dim
    obs = np.zeros((len(steps), n, d))
    alive = np.zeros((len(steps), n), dtype=bool)
    state = np.zeros((len(steps), spec.state_dim))
    for e, s in enumerate(steps):
        if s is not None:
            obs[e], alive[e], state[e] = s.observations, s.alive_mask, s.global_state
    return obs, alive, state


@torch.no_grad()
def collect(agent: CommAgent, envs: list[TrafficJunction], seeds, act: ActFn,
            generator: torch.Generator | None = None, eval_mode: bool = False,
            keep_bits: torch.Tensor | None = None, critic=None, trace: list | None = None,
            sent_override=None) -> Trajectory:
    """Run one episode in every env in lock-step and return the padded batch.

    Communication noise is drawn from ``generator`` and stored so that the
    training forward pass can replay it exactly. ``critic`` (state -> value)
    fills ``values`` when given. ``trace`` receives per-step ``(CommOutput, alive)`` pairs.
    """
    spec = envs[0].spec
    E, N, T = len(envs), spec.num_agents, spec.max_steps
    dtype = agent.head.weight.dtype
    steps: list[EnvStep | None] = [env.reset(int(s)) for env, s in zip(envs, seeds)]
    obs = np.zeros((T + 1, E, N, spec.obs_dim))
    alive = np.zeros((T + 1, E, N), dtype=bool)
    state = np.zeros((T + 1, E, spec.state_dim))
    actions = np.zeros((T, E, N), dtype=np.int64)
    rewards = np.zeros((T, E))
    dones = np.zeros((T, E), dtype=bool)
    valid = np.zeros((T, E), dtype=bool)
    log_probs = np.zeros((T, E, N))
    sib = np.zeros((T, E))
    xib = np.zeros((T, E))
    rounds = agent.comm_config.rounds
    kept = np.zeros((T, E, rounds))
    complete = np.zeros((T, E))
    noise = agent.draw_noise((T + 1, E), generator) if not eval_mode else None

    obs[0], alive[0], state[0] = _stack_steps(steps, spec)
    hidden = agent.initial_hidden(E, N, dtype)
    for t in range(T):
        live = np.array([s is not None for s in steps])
        if not live.any():
            break
        o = torch.as_tensor(obs[t], dtype=dtype)
        a_mask = torch.as_tensor(alive[t])
        step_noise = None
        if noise is not None:
            step_noise = type(noise)(noise.uniform[t], noise.normal[t])
        out = agent.step(o, a_mask, hidden, step_noise, eval_mode=eval_mode, keep_bits=keep_bits,
                         sent_override=sent_override)
        hidden = out.hidden
        acts, lp = act(out, a_mask, t)
        acts_np = acts.cpu().numpy()
        actions[t] = acts_np
        if lp is not None:
            log_probs[t] = lp.cpu().numpy()
        sib[t], xib[t] = out.sib.cpu().numpy(), out.xib.cpu().numpy()
        if out.comm is not None:
            for l, r in enumerate(out.comm.rounds):
                kept[t, :, l] = (r.edges >= 0.5).sum(dim=(-1, -2)).cpu().numpy()
            n_alive = alive[t].sum(-1)
            complete[t] = n_alive * (n_alive - 1)
            if trace is not None:
                trace.append((out.comm, a_mask))
        valid[t] = live
        new_steps: list[EnvStep | None] = []
        for e, (env, s) in enumerate(zip(envs, steps)):
            if s is None:
                new_steps.append(None)
                continue
            r = env.step(acts_np[e])
            rewards[t, e] = r.shared_reward
            dones[t, e] = r.done
            new_steps.append(None if r.done else r)
            obs[t + 1, e], alive[t + 1, e], state[t + 1, e] = r.observations, r.alive_mask, r.global_state
        steps = new_steps

    traj = Trajectory(obs=obs, alive=alive, state=state, actions=actions, rewards=rewards, dones=dones,
                      valid=valid, log_probs=log_probs, sib=sib, xib=xib, edges_kept=kept,
                      edges_complete=complete)
    if noise is not None:
        traj.noise_u = noise.uniform.cpu().numpy()
        traj.noise_eps = noise.normal.cpu().numpy()
    if critic is not None:
        traj.values = critic(torch.as_tensor(state, dtype=dtype)).squeeze(-1).cpu().numpy()
    traj.check()
    return traj


def greedy_act(out: AgentOutput, alive, t):
    return out.out.argmax(-1), None


def sample_act(generator: torch.Generator | None):
    def act(out: AgentOutput, alive, t):
        dist = torch.distributions.Categorical(logits=out.out)
        probs = dist.probs.reshape(-1, dist.probs.shape[-1])
        a = torch.multinomial(probs, 1, generator=generator).reshape(dist.probs.shape[:-1])
        return a, dist.log_prob(a)
    return act


EVAL_SEED_BASE = 1_000_000


def evaluate_policy(agent: CommAgent, map_name: str, episodes: int, seed_base: int = EVAL_SEED_BASE,
                    keep_bits: torch.Tensor | None = None, max_envs: int = 50, trace: list | None = None,
                    sent_override=None) -> dict:
    """Greedy, eval-mode episodes on fixed seeds ``seed_base + i``.

    Returns per-episode returns and per-round kept/complete edge
    counts (structure as actually used, before bit masking).
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    returns, kept, complete, actions = [], [], [], []
    done = 0
    while done < episodes:
        count = min(max_envs, episodes - done)
        envs = [TrafficJunction(map_name) for _ in range(count)]
        traj = collect(agent, envs, range(seed_base + done, seed_base + done + count), greedy_act,
                       eval_mode=True, keep_bits=keep_bits, trace=trace, sent_override=sent_override)
        returns.append(traj.episode_returns())
        actions.append(traj.actions)
        v = traj.valid
        kept.append((traj.edges_kept * v[..., None]).sum(axis=(0, 1)))
        complete.append((traj.edges_complete * v).sum())
        done += count
    kept_total = np.sum(kept, axis=0)
    complete_total = float(np.sum(complete))
    scr = [float((complete_total - k) / complete_total) if complete_total > 0 else 0.0 for k in kept_total]
    r = np.concatenate(returns)
    return {"returns": r, "return_mean": float(r.mean()), "return_std": float(r.std()),
            "edges_kept": [int(k) for k in kept_total], "edges_complete": int(complete_total),
            "scr_per_round": scr,
            "actions": np.concatenate(actions, axis=1)}
