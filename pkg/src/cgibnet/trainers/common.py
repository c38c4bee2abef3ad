from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..traffic_env import TrafficJunction


@dataclass
class LossBreakdown:
    """Eq.-13 style objective: ``total = task + beta_S * sib + beta_X * xib``.

    Fields are 0-d tensors so that ``total`` can be recomputed bit for bit.
    """
    task_loss: torch.Tensor
    sib_term: torch.Tensor
    xib_term: torch.Tensor
    beta_S: float
    beta_X: float
    total: torch.Tensor = None  # type: ignore[assignment]
    extras: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.total is None:
            self.total = self.task_loss + self.beta_S * self.sib_term + self.beta_X * self.xib_term

    def as_dict(self) -> dict[str, float]:
        out = {"task_loss": self.task_loss.item(), "sib_term": self.sib_term.item(),
               "xib_term": self.xib_term.item(), "total": self.total.item()}
        out.update(self.extras)
        return out


@dataclass
class Trajectory:
    """A batch of E time-aligned episodes padded to T = max_steps.

    Index ``t`` holds the observation before action ``t``; ``obs`` and friends
    have T + 1 entries so the final observation is available for bootstrapping.
    """
    obs: np.ndarray  # (T+1, E, N, D)
    alive: np.ndarray  # (T+1, E, N) bool
    state: np.ndarray  # (T+1, E, S)
    actions: np.ndarray  # (T, E, N)
    rewards: np.ndarray  # (T, E)
    dones: np.ndarray  # (T, E) done after step t
    valid: np.ndarray  # (T, E) step t was taken
    noise_u: np.ndarray | None = None  # (T+1, E, L, N, N)
    noise_eps: np.ndarray | None = None  # (T+1, E, L, N, d)
    log_probs: np.ndarray | None = None  # (T, E, N) behaviour policy
    values: np.ndarray | None = None  # (T+1, E)
    chosen_q: np.ndarray | None = None  # (T, E, N)
    sib: np.ndarray | None = None  # (T, E)
    xib: np.ndarray | None = None  # (T, E)
    edges_kept: np.ndarray | None = None  # (T, E, L)
    edges_complete: np.ndarray | None = None  # (T, E)

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def num_envs(self) -> int:
        return self.actions.shape[1]

    def episode_returns(self) -> np.ndarray:
        return (self.rewards * self.valid).sum(0)

    def check(self) -> None:
        T = self.length
        for name in ("rewards", "dones", "valid"):
            if getattr(self, name).shape[0] != T:
                raise ValueError(f"{name} has the wrong length")
        if self.obs.shape[0] != T + 1:
            raise ValueError("obs must have T + 1 entries")
        if not np.all(np.isfinite(self.rewards)):
            raise FloatingPointError("non-finite reward in trajectory")


def compute_advantages(rewards, values, dones, valid, gamma: float, lam: float,
                       normalize: bool = True, weights=None) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates over time-major arrays.

    ``rewards``, ``dones``, ``valid`` are (T, ...); ``values`` is (T+1, ...).
    Returns ``(advantages, returns)``; returns are the unnormalised
    ``advantage + value`` targets. Normalisation uses the ``valid`` entries
    (optionally weighted, e.g. by the number of alive agents).
    """
    if values is None:
        raise ValueError("advantage computation needs value estimates")
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    valid = np.asarray(valid, dtype=np.float64)
    T = rewards.shape[0]
    if values.shape[0] != T + 1:
        raise ValueError("values must have one more entry than rewards")
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    for t in reversed(range(T)):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        last = last * valid[t]
        adv[t] = last
    returns = adv + values[:-1] * valid
    if normalize:
        w = valid if weights is None else valid * np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if total > 0:
            mean = (adv * w).sum() / total
            var = (((adv - mean) ** 2) * w).sum() / total
            adv = (adv - mean) / (np.sqrt(var) + 1e-8) * valid
    return adv, returns


class ValueNorm:
    """Running mean/variance of value targets (debiased exponential average)."""

    def __init__(self, beta: float = 0.99, eps: float = 1e-5):
        self.beta = beta
        self.eps = eps
        self.mean = 0.0
        self.sq = 0.0
        self.debias = 0.0

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64)
        if x.size == 0:
            return
        self.mean = self.beta * self.mean + (1 - self.beta) * x.mean()
        self.sq = self.beta * self.sq + (1 - self.beta) * (x ** 2).mean()
        self.debias = self.beta * self.debias + (1 - self.beta)

    @property
    def stats(self) -> tuple[float, float]:
        d = max(self.debias, self.eps)
        mean = self.mean / d
        var = max(self.sq / d - mean ** 2, 1e-2)
        return mean, float(np.sqrt(var))

    def normalize(self, x):
        mean, std = self.stats
        return (x - mean) / std

    def denormalize(self, x):
        mean, std = self.stats
        return x * std + mean

    def state_dict(self) -> dict:
        return {"mean": self.mean, "sq": self.sq, "debias": self.debias, "beta": self.beta}

    def load_state_dict(self, d: dict) -> None:
        self.mean, self.sq, self.debias, self.beta = d["mean"], d["sq"], d["debias"], d["beta"]


def batch_size_to_envs(batch_size: int, max_steps: int) -> int:
    """Number of parallel episodes giving at least ``batch_size`` env steps."""
    return max(1, -(-batch_size // max_steps))


def make_envs(map_name: str, count: int) -> list[TrafficJunction]:
    return [TrafficJunction(map_name) for _ in range(count)]


def seed_everything(seed: int) -> tuple[np.random.Generator, torch.Generator]:
    torch.manual_seed(seed)
    return np.random.default_rng(seed), torch.Generator().manual_seed(seed)
