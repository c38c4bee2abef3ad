"""Small trainable maps used across the package, plus numerical checks.

Every network here is an ``nn.Module``; the "named flat parameter vector" view
is ``module.named_parameters()``. Architectures are deliberately minimal:

* ``ObsEncoder``       observation -> embedding (one tanh layer)
* ``EdgePredictor``    pair of node embeddings -> edge logit (2-layer MLP)
* ``GaussianHead``     node embedding -> (mu, sigma), sigma via softplus + floor
* ``MeanPoolAggregator`` masked mean of incoming messages, linearly combined
  with the receiver's own embedding
* ``RecurrentCore``    GRU cell, orthogonal init, zero initial state
* ``MonotonicMixer``   QMIX hypernetwork mixer with non-negative weights
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

SIGMA_FLOOR = 1e-4
SIGMA_UNIT_BIAS = math.log(math.e - 1)
CHECKPOINT_VERSION = 1


def mlp(sizes: list[int], activation=nn.Tanh, final_activation: bool = False) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(sizes) - 2 or final_activation:
            layers.append(activation())
    return nn.Sequential(*layers)


class ObsEncoder(nn.Module):
    def __init__(self, obs_dim: int, embed_dim: int = 64):
        super().__init__()
        self.net = mlp([obs_dim, embed_dim], final_activation=True)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.net(obs)


class EdgePredictor(nn.Module):
    """Link predictor g_c: logit for the directed edge sender -> receiver.

    ``forward`` takes node embeddings ``(..., N, D)`` and returns all pairwise
    logits ``(..., N, N)`` with entry ``[j, k]`` scoring the edge ``j -> k``.
    """

    def __init__(self, in_dim: int, hidden_dim: int = 64, init_bias: float = 0.0):
        super().__init__()
        self.sender = nn.Linear(in_dim, hidden_dim)
        self.receiver = nn.Linear(in_dim, hidden_dim, bias=False)
        self.out = nn.Linear(hidden_dim, 1)
        nn.init.constant_(self.out.bias, init_bias)

    def forward(self, nodes: torch.Tensor) -> torch.Tensor:
        # Linear(concat(x_j, x_k)) == W_s x_j + W_r x_k, computed once per node
        hs = self.sender(nodes).unsqueeze(-2)  # (..., N, 1, H): sender j
        hr = self.receiver(nodes).unsqueeze(-3)  # (..., 1, N, H): receiver k
        return self.out(torch.tanh(hs + hr)).squeeze(-1)


class GaussianHead(nn.Module):
    """g_{mu,sigma}: shared trunk with a mean head and a softplus scale head."""

    def __init__(self, in_dim: int, bits: int, hidden_dim: int = 64, sigma_floor: float = SIGMA_FLOOR):
        super().__init__()
        self.trunk = mlp([in_dim, hidden_dim], final_activation=True)
        self.mu = nn.Linear(hidden_dim, bits)
        self.sigma = nn.Linear(hidden_dim, bits)
        self.sigma_floor = sigma_floor
        # start at the N(0, 1) prior scale: softplus(ln(e - 1)) == 1
        nn.init.constant_(self.sigma.bias, SIGMA_UNIT_BIAS)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.trunk(x)
        sigma = F.softplus(self.sigma(h)).clamp_min(self.sigma_floor)
        return self.mu(h), sigma


class MeanPoolAggregator(nn.Module):
    """g_m: receiver i gets ``W_p * mean_j(w_ji m_j) + W_s * own_i + b``.

    ``weights[..., j, i]`` is the (possibly relaxed) edge value j -> i. The mean
    divides by ``max(sum_j w_ji, 1)`` so that a receiver with no incoming
    edges gets a zero pooled vector and soft weights stay smooth.
    """

    def __init__(self, own_dim: int, bits: int, out_dim: int | None = None):
        super().__init__()
        out_dim = bits if out_dim is None else out_dim
        self.pool = nn.Linear(bits, out_dim, bias=False)
        self.own = nn.Linear(own_dim, out_dim)

    @staticmethod
    def pooled(messages: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
        # (..., N_recv, N_send) @ (..., N_send, d)
        total = torch.matmul(weights.transpose(-1, -2), messages)
        count = weights.sum(dim=-2).unsqueeze(-1).clamp_min(1.0)
        return total / count

    def forward(self, messages: torch.Tensor, weights: torch.Tensor, own: torch.Tensor) -> torch.Tensor:
        return self.pool(self.pooled(messages, weights)) + self.own(own)


class RecurrentCore(nn.Module):
    def __init__(self, input_dim: int, hidden_dim: int = 64):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.cell = nn.GRUCell(input_dim, hidden_dim)
        for name, p in self.cell.named_parameters():
            if "weight_hh" in name:
                for chunk in p.data.chunk(3, dim=0):
                    nn.init.orthogonal_(chunk)
            elif "bias" in name:
                nn.init.zeros_(p)

    def initial_state(self, batch: int, dtype=None) -> torch.Tensor:
        return torch.zeros(batch, self.hidden_dim, dtype=dtype or self.cell.weight_ih.dtype)

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        return self.cell(x, h)

    def unroll(self, xs: torch.Tensor, h0: torch.Tensor | None = None) -> torch.Tensor:
        """Run over a (T, B, input_dim) sequence; returns (T, B, hidden)."""
        h = self.initial_state(xs.shape[1], xs.dtype) if h0 is None else h0
        outs = []
        for x in xs:
            h = self.cell(x, h)
            outs.append(h)
        return torch.stack(outs)


class MonotonicMixer(nn.Module):
    """Mixes per-agent Q-values into Q_tot with state-conditioned weights.

    Both weight matrices that touch the agent Q-values pass through
    ``weight_transform`` (absolute value), so dQ_tot/dQ_i >= 0 for any state.
    """

    def __init__(self, num_agents: int, state_dim: int, mixer_hidden_dim: int = 32, hyper_hidden_dim: int = 64):
        super().__init__()
        self.num_agents = num_agents
        self.embed = mixer_hidden_dim
        self.hyper_w1 = nn.Sequential(nn.Linear(state_dim, hyper_hidden_dim), nn.ReLU(),
                                      nn.Linear(hyper_hidden_dim, num_agents * mixer_hidden_dim))
        self.hyper_b1 = nn.Linear(state_dim, mixer_hidden_dim)
        self.hyper_w2 = nn.Sequential(nn.Linear(state_dim, hyper_hidden_dim), nn.ReLU(),
                                      nn.Linear(hyper_hidden_dim, mixer_hidden_dim))
        self.hyper_b2 = nn.Sequential(nn.Linear(state_dim, mixer_hidden_dim), nn.ReLU(),
                                      nn.Linear(mixer_hidden_dim, 1))

    def weight_transform(self, w: torch.Tensor, layer: int) -> torch.Tensor:
        return torch.abs(w)

    def forward(self, agent_qs: torch.Tensor, states: torch.Tensor) -> torch.Tensor:
        """agent_qs (..., N), states (..., S) -> Q_tot (...)."""
        lead = agent_qs.shape[:-1]
        qs = agent_qs.reshape(-1, 1, self.num_agents)
        s = states.reshape(-1, states.shape[-1])
        w1 = self.weight_transform(self.hyper_w1(s), 1).view(-1, self.num_agents, self.embed)
        b1 = self.hyper_b1(s).view(-1, 1, self.embed)
        hidden = F.elu(torch.bmm(qs, w1) + b1)
        w2 = self.weight_transform(self.hyper_w2(s), 2).view(-1, self.embed, 1)
        b2 = self.hyper_b2(s).view(-1, 1, 1)
        return (torch.bmm(hidden, w2) + b2).reshape(lead)


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    worst_parameter: str = ""
    num_checked: int = 0


def grad_check(loss_fn: Callable[[], torch.Tensor], params: Iterable[torch.Tensor] | Mapping[str, torch.Tensor],
               tolerance: float = 1e-4, h: float = 1e-5) -> GradCheckReport:
    """Compare autograd gradients with central finite differences.

    ``loss_fn`` must return a scalar and be deterministic (fix any sampling
    noise outside of it). Parameters must be float64. The error for each
    coordinate is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    named = dict(params) if isinstance(params, Mapping) else {f"p{i}": p for i, p in enumerate(params)}
    for name, p in named.items():
        if p.dtype != torch.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {p.dtype}")

    for p in named.values():
        p.grad = None
    loss = loss_fn()
    if loss.numel() != 1:
        raise ValueError("grad_check needs a scalar loss")
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()}")
    analytic = torch.autograd.grad(loss, list(named.values()), allow_unused=True)

    worst, worst_name, count = 0.0, "", 0
    with torch.no_grad():
        for (name, p), g in zip(named.items(), analytic):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
                numeric = (up - down) / (2 * h)
                a = gflat[i].item()
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                count += 1
                if err > worst:
                    worst, worst_name = err, f"{name}[{i}]"
    return GradCheckReport(worst, worst < tolerance, worst_name, count)


@dataclass
class MonotonicityReport:
    min_partial: float
    trials: int


def mixer_monotonicity_probe(mixer: Callable[[torch.Tensor, torch.Tensor], torch.Tensor], num_agents: int,
                             state_dim: int, trials: int = 1000, seed: int = 0, h: float = 1e-4,
                             q_scale: float = 10.0) -> MonotonicityReport:
    """Finite-difference estimate of min_i dQ_tot/dQ_i over random (state, Q) draws."""
    gen = torch.Generator().manual_seed(seed)
    states = torch.randn(trials, state_dim, generator=gen, dtype=torch.float64)
    qs = q_scale * torch.randn(trials, num_agents, generator=gen, dtype=torch.float64)
    partials = []
    with torch.no_grad():
        for i in range(num_agents):
            e = torch.zeros(num_agents, dtype=torch.float64)
            e[i] = h
            up = mixer(qs + e, states)
            down = mixer(qs - e, states)
            partials.append((up - down) / (2 * h))
    return MonotonicityReport(float(torch.stack(partials).min()), trials)


def signature_of(modules: Mapping[str, nn.Module]) -> dict:
    return {name: {p: list(t.shape) for p, t in m.state_dict().items()} for name, m in modules.items()}


def save_checkpoint(path: str | Path, modules: Mapping[str, nn.Module], architecture: Mapping,
                    seed: int, extra: Mapping | None = None) -> Path:
    """Write ``manifest.json`` and ``params.npz`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {f"{name}/{p}": t.detach().cpu().numpy() for name, m in modules.items()
              for p, t in m.state_dict().items()}
    np.savez(path / "params.npz", **arrays)
    digest = hashlib.sha256()
    for k in sorted(arrays):
        digest.update(k.encode())
        digest.update(np.ascontiguousarray(arrays[k]).tobytes())
    manifest = {
        "version": CHECKPOINT_VERSION,
        "architecture": dict(architecture),
        "shapes": signature_of(modules),
        "seed": seed,
        "sha256": digest.hexdigest(),
        "extra": dict(extra or {}),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_manifest(path: str | Path) -> dict:
    return json.loads((Path(path) / "manifest.json").read_text())


def load_checkpoint(path: str | Path, modules: Mapping[str, nn.Module], architecture: Mapping | None = None) -> dict:
    """Load parameters into ``modules`` after validating the stored signature."""
    path = Path(path)
    manifest = read_manifest(path)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {manifest.get('version')} is not supported")
    if architecture is not None and manifest["architecture"] != json.loads(json.dumps(dict(architecture))):
        raise ValueError("checkpoint architecture does not match the requested configuration")
    if manifest["shapes"] != signature_of(modules):
        raise ValueError("checkpoint parameter shapes do not match the model")
    with np.load(path / "params.npz") as data:
        for name, m in modules.items():
            state = {p: torch.as_tensor(data[f"{name}/{p}"]) for p in m.state_dict()}
            m.load_state_dict(state)
    return manifest
