"""Compressed communication graph with structural and node bottlenecks.

Each communication round ``l``:

1. zero the embeddings and edges of agents that are no longer alive;
2. predict a Bernoulli probability ``alpha_jk`` for every valid directed edge
   ``j -> k`` from the round input embeddings, add
   ``KL(Bernoulli(alpha) || Bernoulli(0.5))`` to the structural term and draw a
   relaxed Bernoulli edge value;
3. predict ``(mu, sigma)`` for every alive node, add
   ``KL(N(mu, sigma^2) || N(0, I))`` to the node term and draw a message;
4. aggregate, for each receiver, the messages of the senders its edges keep.

All functions are batched over leading dimensions and take their sampling
noise as explicit tensors, so a forward pass can be replayed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .approximators import EdgePredictor, GaussianHead, MeanPoolAggregator

ALPHA_EPS = 1e-6
UNIFORM_EPS = 1e-6
COMM_MODES = ("cgibnet", "full", "none")
MESSAGE_FORMULAS = ("conventional", "printed")


@dataclass
class CommConfig:
    num_agents: int
    bits: int = 5
    rounds: int = 1
    temperature: float = 1.0
    beta_S: float = 0.1
    beta_X: float = 0.001
    eval_mode: bool = False
    mode: str = "cgibnet"
    # "conventional": mu + sigma * eps; "printed": mu * eps + sigma
    message_formula: str = "conventional"
    hidden_dim: int = 64
    edge_init_bias: float = 0.0

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("bits must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.beta_S < 0 or self.beta_X < 0:
            raise ValueError("beta_S and beta_X must be >= 0")
        if self.mode not in COMM_MODES:
            raise ValueError(f"mode must be one of {COMM_MODES}")
        if self.message_formula not in MESSAGE_FORMULAS:
            raise ValueError(f"message_formula must be one of {MESSAGE_FORMULAS}")


def clamp_alpha(alpha):
    if isinstance(alpha, torch.Tensor):
        return alpha.clamp(ALPHA_EPS, 1 - ALPHA_EPS)
    return min(max(float(alpha), ALPHA_EPS), 1 - ALPHA_EPS)


def kl_bernoulli_vs_half(alpha):
    """KL(Bernoulli(alpha) || Bernoulli(0.5)) = a ln 2a + (1-a) ln 2(1-a)."""
    if isinstance(alpha, torch.Tensor):
        a = clamp_alpha(alpha)
        return a * torch.log(2 * a) + (1 - a) * torch.log(2 * (1 - a))
    if not math.isfinite(float(alpha)):
        raise FloatingPointError(f"alpha must be finite, got {alpha}")
    a = clamp_alpha(alpha)
    return a * math.log(2 * a) + (1 - a) * math.log(2 * (1 - a))


def kl_diag_gaussian_vs_standard(mu, sigma):
    """Per-bit KL(N(mu, sigma^2) || N(0, 1)) = (mu^2 + sigma^2 - ln sigma^2 - 1) / 2."""
    mu = torch.as_tensor(mu, dtype=torch.float64) if not isinstance(mu, torch.Tensor) else mu
    sigma = torch.as_tensor(sigma, dtype=mu.dtype) if not isinstance(sigma, torch.Tensor) else sigma
    if not sigma.requires_grad and bool((sigma <= 0).any()):
        raise ValueError("sigma must be strictly positive")
    return 0.5 * (mu ** 2 + sigma ** 2 - 2 * torch.log(sigma) - 1)


def logistic_noise(u: torch.Tensor) -> torch.Tensor:
    return torch.log(u) - torch.log1p(-u)


def sample_edge(alpha, tau: float, u=None, generator: torch.Generator | None = None, eval_mode: bool = False):
    """Binary Concrete draw sigmoid((logit(alpha) + logistic noise) / tau).

    In eval mode the edge is the hard decision ``alpha >= 0.5``.
    """
    alpha = torch.as_tensor(alpha, dtype=torch.float64) if not isinstance(alpha, torch.Tensor) else alpha
    if eval_mode:
        return (alpha >= 0.5).to(alpha.dtype)
    a = clamp_alpha(alpha)
    if u is None:
        u = torch.rand(a.shape, generator=generator, dtype=a.dtype).clamp(UNIFORM_EPS, 1 - UNIFORM_EPS)
    else:
        u = torch.as_tensor(u, dtype=a.dtype)
    logit = torch.log(a) - torch.log1p(-a)
    return torch.sigmoid((logit + logistic_noise(u)) / tau)


def sample_node_message(mu, sigma, eps=None, generator: torch.Generator | None = None,
                        formula: str = "conventional", eval_mode: bool = False):
    """Reparameterised Gaussian message; eval mode sends the mean."""
    mu = torch.as_tensor(mu, dtype=torch.float64) if not isinstance(mu, torch.Tensor) else mu
    sigma = torch.as_tensor(sigma, dtype=mu.dtype) if not isinstance(sigma, torch.Tensor) else sigma
    if eval_mode:
        return mu
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    if formula == "printed":
        return mu * eps + sigma
    return mu + sigma * eps


@dataclass
class CommNoise:
    """Sampling noise for one forward pass: uniforms (..., L, N, N), normals (..., L, N, d)."""
    uniform: torch.Tensor
    normal: torch.Tensor

    @classmethod
    def draw(cls, batch_shape: tuple[int, ...], rounds: int, num_agents: int, bits: int,
             generator: torch.Generator | None = None, dtype=torch.float32) -> "CommNoise":
        u = torch.rand(*batch_shape, rounds, num_agents, num_agents, generator=generator, dtype=dtype)
        eps = torch.randn(*batch_shape, rounds, num_agents, bits, generator=generator, dtype=dtype)
        return cls(u.clamp(UNIFORM_EPS, 1 - UNIFORM_EPS), eps)

    def round(self, l: int) -> tuple[torch.Tensor, torch.Tensor]:
        return self.uniform[..., l, :, :], self.normal[..., l, :, :]


@dataclass
class RoundOutput:
    """Diagnostics of one round; tensors keep the caller's batch dimensions."""
    alpha: torch.Tensor  # (..., N, N); zero on invalid edges
    edges: torch.Tensor  # (..., N, N) sampled structure m_S, zero diagonal
    valid: torch.Tensor  # (..., N, N) bool, edges that were scored this round
    mu: torch.Tensor  # (..., N, d)
    sigma: torch.Tensor  # (..., N, d)
    sent: torch.Tensor  # (..., N, d) node messages after sampling and masking
    edge_kl: torch.Tensor  # (..., N, N), zero on invalid edges
    bit_kl: torch.Tensor  # (..., N, d), zero for dead agents
    sib: torch.Tensor  # (...)
    xib: torch.Tensor  # (...)
    aggregated: torch.Tensor  # (..., N, d)


@dataclass
class CommOutput:
    messages: torch.Tensor  # (..., N, d) what each receiver gets, m_{-i}
    sib: torch.Tensor  # (...) summed over rounds
    xib: torch.Tensor  # (...)
    rounds: list[RoundOutput] = field(default_factory=list)


class CommLayer(nn.Module):
    def __init__(self, in_dim: int, bits: int, hidden_dim: int = 64, learn_structure: bool = True,
                 edge_init_bias: float = 0.0):
        super().__init__()
        self.edge = EdgePredictor(in_dim, hidden_dim, init_bias=edge_init_bias) if learn_structure else None
        self.node = GaussianHead(in_dim, bits, hidden_dim)
        self.agg = MeanPoolAggregator(in_dim, bits)

    def edge_probs(self, x: torch.Tensor) -> torch.Tensor:
        """alpha for every ordered pair, a function of this round's input only."""
        return clamp_alpha(torch.sigmoid(self.edge(x)))

    def forward(self, x, valid, alive, u, eps, *, tau: float, eval_mode: bool, formula: str,
                keep_bits: torch.Tensor | None = None, sent_override=None) -> RoundOutput:
        alive_f = alive.to(x.dtype)
        x = x * alive_f.unsqueeze(-1)
        valid = valid & alive.unsqueeze(-1) & alive.unsqueeze(-2)
        valid_f = valid.to(x.dtype)

        if self.edge is not None:
            alpha = self.edge_probs(x)
            edge_kl = kl_bernoulli_vs_half(alpha) * valid_f
            if eval_mode:
                draw = (alpha >= 0.5).to(x.dtype)
            else:
                logit = torch.log(alpha) - torch.log1p(-alpha)
                draw = torch.sigmoid((logit + logistic_noise(u)) / tau)
            edges = draw * valid_f
            alpha = alpha * valid_f
        else:
            alpha = valid_f
            edge_kl = torch.zeros_like(valid_f)
            edges = valid_f

        mu, sigma = self.node(x)
        bit_kl = kl_diag_gaussian_vs_standard(mu, sigma) * alive_f.unsqueeze(-1)
        if eval_mode:
            sent = mu
        elif formula == "printed":
            sent = mu * eps + sigma
        else:
            sent = mu + sigma * eps
        sent = sent * alive_f.unsqueeze(-1)
        if sent_override is not None:
            sent = sent_override(sent)
        if keep_bits is not None:
            sent = torch.where(keep_bits, sent, torch.zeros_like(sent))
        aggregated = self.agg(sent, edges, x) * alive_f.unsqueeze(-1)
        return RoundOutput(alpha=alpha, edges=edges, valid=valid, mu=mu, sigma=sigma, sent=sent,
                           edge_kl=edge_kl, bit_kl=bit_kl, sib=edge_kl.sum(dim=(-1, -2)),
                           xib=bit_kl.sum(dim=(-1, -2)), aggregated=aggregated)


class GIBComm(nn.Module):
    """Stack of ``rounds`` communication layers over encoded observations."""

    def __init__(self, config: CommConfig, embed_dim: int):
        super().__init__()
        if config.mode == "none":
            raise ValueError("GIBComm is not used when communication is disabled")
        self.config = config
        learn = config.mode == "cgibnet"
        dims = [embed_dim] + [config.bits] * (config.rounds - 1)
        self.layers = nn.ModuleList(
            CommLayer(d_in, config.bits, config.hidden_dim, learn, config.edge_init_bias) for d_in in dims
        )

    def draw_noise(self, batch_shape, generator=None, dtype=torch.float32) -> CommNoise:
        c = self.config
        return CommNoise.draw(tuple(batch_shape), c.rounds, c.num_agents, c.bits, generator, dtype)

    def forward(self, embeddings: torch.Tensor, alive: torch.Tensor, noise: CommNoise | None = None,
                eval_mode: bool | None = None, keep_bits: torch.Tensor | None = None,
                sent_override=None) -> CommOutput:
        """embeddings (..., N, D), alive (..., N) bool.

        ``keep_bits`` (broadcastable to (..., N, d), True = transmitted) masks
        bits of the last round; masked bits reach receivers as zeros.
        ``sent_override`` is a test hook applied to the last round's messages
        before masking.
        """
        c = self.config
        n = embeddings.shape[-2]
        if n == 0:
            raise ValueError("communication needs at least one agent")
        eval_mode = c.eval_mode if eval_mode is None else eval_mode
        if noise is None and not eval_mode:
            noise = self.draw_noise(embeddings.shape[:-2], dtype=embeddings.dtype)
        alive = alive.bool()
        eye = torch.eye(n, dtype=torch.bool)
        valid = (~eye).expand(*alive.shape[:-1], n, n)
        x = embeddings
        rounds: list[RoundOutput] = []
        for l, layer in enumerate(self.layers):
            u, eps = noise.round(l) if noise is not None else (None, None)
            last = l == len(self.layers) - 1
            out = layer(x, valid, alive, u, eps, tau=c.temperature, eval_mode=eval_mode,
                        formula=c.message_formula, keep_bits=keep_bits if last else None,
                        sent_override=sent_override if last else None)
            rounds.append(out)
            x = out.aggregated
            # an edge stays in the candidate set while its last draw is "on"
            valid = out.edges >= 0.5
        sib = torch.stack([r.sib for r in rounds]).sum(0)
        xib = torch.stack([r.xib for r in rounds]).sum(0)
        return CommOutput(messages=x, sib=sib, xib=xib, rounds=rounds)


@dataclass
class CommState:
    node_messages: np.ndarray
    edge_samples: np.ndarray
    edge_probs: np.ndarray
    node_means: np.ndarray
    node_stds: np.ndarray
    sib_total: float
    xib_total: float
    alive_mask: np.ndarray


@dataclass
class KLLedger:
    """Per-edge and per-bit KL terms of one forward pass.

    ``per_edge_kl`` maps (round, sender, receiver) to its KL; ``per_bit_kl`` is
    (rounds, N, d). Their sums equal the structural and node totals.
    """
    per_edge_kl: dict[tuple[int, int, int], float]
    per_bit_kl: np.ndarray
    mean_abs: np.ndarray | None = None

    @property
    def sib_total(self) -> float:
        return float(sum(self.per_edge_kl.values()))

    @property
    def xib_total(self) -> float:
        return float(self.per_bit_kl.sum())

    @property
    def last_round_bits(self) -> np.ndarray:
        return self.per_bit_kl[-1]


def communicate(comm: GIBComm, embeddings, alive_mask, noise: CommNoise | None = None,
                eval_mode: bool | None = None, keep_bits=None):
    """Single-instance forward pass returning numpy records.

    Returns ``(messages (N, d), [CommState per round], KLLedger)``.
    """
    emb = torch.as_tensor(np.asarray(embeddings), dtype=next(comm.parameters()).dtype)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise ValueError("communicate needs a non-empty (N, D) embedding matrix")
    alive = torch.as_tensor(np.asarray(alive_mask, dtype=bool))
    kb = None if keep_bits is None else torch.as_tensor(np.asarray(keep_bits, dtype=bool))
    with torch.no_grad():
        out = comm(emb, alive, noise, eval_mode=eval_mode, keep_bits=kb)
    states, edge_kl, bit_kl = [], {}, []
    sib_acc = xib_acc = 0.0
    for l, r in enumerate(out.rounds):
        sib_acc += float(r.sib)
        xib_acc += float(r.xib)
        states.append(CommState(
            node_messages=r.sent.numpy().copy(), edge_samples=r.edges.numpy().copy(),
            edge_probs=r.alpha.numpy().copy(), node_means=r.mu.numpy().copy(),
            node_stds=r.sigma.numpy().copy(), sib_total=sib_acc, xib_total=xib_acc,
            alive_mask=alive.numpy().copy()))
        valid = r.valid.numpy()
        kl = r.edge_kl.numpy()
        for j, k in zip(*np.nonzero(valid)):
            edge_kl[(l, int(j), int(k))] = float(kl[j, k])
        bit_kl.append(r.bit_kl.numpy())
    last = out.rounds[-1].sent.numpy()
    ledger = KLLedger(edge_kl, np.stack(bit_kl), np.abs(last))
    return out.messages.numpy(), states, ledger


def rank_bits(per_bit_kl) -> list[tuple[int, int]]:
    """(node, bit) pairs in ascending KL order, ties broken by (node, bit)."""
    kl = per_bit_kl.last_round_bits if isinstance(per_bit_kl, KLLedger) else np.asarray(per_bit_kl)
    n, d = kl.shape
    nodes, bits = np.meshgrid(np.arange(n), np.arange(d), indexing="ij")
    order = np.lexsort((bits.ravel(), nodes.ravel(), kl.ravel()))
    return [(int(nodes.ravel()[i]), int(bits.ravel()[i])) for i in order]
