"""Shared-parameter agent network: encoder -> communication -> GRU -> head.

The same module serves as the MAPPO actor (head = action logits) and the QMIX
utility network (head = per-action Q-values). Communication depends only on
the current observations, so a whole trajectory's messages are computed in one
batched call and only the GRU runs step by step.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from ..approximators import ObsEncoder, RecurrentCore
from ..gib_comm import CommConfig, CommNoise, CommOutput, GIBComm


@dataclass
class AgentOutput:
    out: torch.Tensor  # (..., N, out_dim)
    hidden: torch.Tensor  # (..., N, H) final hidden state
    sib: torch.Tensor  # (...) per step
    xib: torch.Tensor
    comm: CommOutput | None


class CommAgent(nn.Module):
    def __init__(self, obs_dim: int, out_dim: int, comm_config: CommConfig, embed_dim: int = 64,
                 hidden_dim: int = 64):
        super().__init__()
        self.comm_config = comm_config
        self.encoder = ObsEncoder(obs_dim, embed_dim)
        self.comm = GIBComm(comm_config, embed_dim) if comm_config.mode != "none" else None
        msg_dim = comm_config.bits if self.comm is not None else 0
        self.core = RecurrentCore(embed_dim + msg_dim, hidden_dim)
        self.head = nn.Linear(hidden_dim, out_dim)
        self.hidden_dim = hidden_dim

    def draw_noise(self, batch_shape, generator=None) -> CommNoise | None:
        if self.comm is None:
            return None
        return self.comm.draw_noise(batch_shape, generator, dtype=self.head.weight.dtype)

    def features(self, obs, alive, noise=None, eval_mode=False, keep_bits=None, sent_override=None):
        emb = self.encoder(obs)
        if self.comm is None:
            zero = emb.new_zeros(emb.shape[:-2])
            return emb, zero, zero, None
        c = self.comm(emb, alive, noise, eval_mode=eval_mode, keep_bits=keep_bits, sent_override=sent_override)
        return torch.cat([emb, c.messages], dim=-1), c.sib, c.xib, c

    def step(self, obs, alive, hidden, noise=None, eval_mode=False, keep_bits=None,
             sent_override=None) -> AgentOutput:
        """One timestep. obs (B, N, D), alive (B, N), hidden (B, N, H)."""
        feats, sib, xib, c = self.features(obs, alive, noise, eval_mode, keep_bits, sent_override)
        b, n = feats.shape[:2]
        h = self.core(feats.reshape(b * n, -1), hidden.reshape(b * n, -1)).reshape(b, n, -1)
        return AgentOutput(self.head(h), h, sib, xib, c)

    def unroll(self, obs, alive, noise=None, eval_mode=False, keep_bits=None) -> AgentOutput:
        """Whole sequences. obs (T, B, N, D), alive (T, B, N); hidden starts at zero."""
        feats, sib, xib, c = self.features(obs, alive, noise, eval_mode, keep_bits)
        T, b, n = feats.shape[:3]
        h = self.initial_hidden(b, n, feats.dtype).reshape(b * n, -1)
        outs = []
        for t in range(T):
            h = self.core(feats[t].reshape(b * n, -1), h)
            outs.append(h)
        hs = torch.stack(outs).reshape(T, b, n, -1)
        return AgentOutput(self.head(hs), hs[-1], sib, xib, c)

    def initial_hidden(self, batch: int, n: int, dtype=None) -> torch.Tensor:
        return torch.zeros(batch, n, self.hidden_dim, dtype=dtype or self.head.weight.dtype)


def noise_from_arrays(u, eps, dtype=torch.float32) -> CommNoise | None:
    if u is None:
        return None
    return CommNoise(torch.as_tensor(u, dtype=dtype), torch.as_tensor(eps, dtype=dtype))
