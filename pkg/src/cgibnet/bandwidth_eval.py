"""Bandwidth accounting (SCR, MCR), bit budgets and constrained evaluation.

Bit accounting: a complete graph over n alive agents has n(n-1) directed
edges and every edge carries d bits, so ``bits_complete = edges_complete * d``.
A sender's bit costs one unit per outgoing kept edge; masking a (node, bit)
pair removes it from all of that node's outgoing edges. Masked bits reach the
receivers as zeros.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .config import MASK_STRATEGIES
from .gib_comm import KLLedger, CommState, rank_bits
from .trainers.agents import CommAgent
from .trainers.rollout import EVAL_SEED_BASE, evaluate_policy

CALIBRATION_SEED_BASE = 2_000_000


def compute_scr(edges_complete: int, edges_kept: int) -> float:
    """Fraction of directed edges pruned relative to the complete graph."""
    if edges_complete <= 0:
        raise ValueError("SCR is undefined for an empty complete graph")
    if not 0 <= edges_kept <= edges_complete:
        raise ValueError("edges_kept must lie in [0, edges_complete]")
    return (edges_complete - edges_kept) / edges_complete


def compute_mcr(bits_complete: int, bits_kept: int) -> float:
    """Fraction of message bits removed, counting pruned edges and masked bits."""
    if bits_complete <= 0:
        raise ValueError("MCR is undefined when no bits can be sent")
    if not 0 <= bits_kept <= bits_complete:
        raise ValueError("bits_kept must lie in [0, bits_complete]")
    return (bits_complete - bits_kept) / bits_complete


@dataclass
class BandwidthReport:
    scr_per_round: list[float]
    mcr: float
    edges_complete: int
    edges_kept: int
    bits_complete: int
    bits_kept: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StructureStats:
    """Kept-edge counts aggregated over one or more eval-mode steps (last round).

    ``out_kept[j]`` counts kept edges with sender j; ``edges_complete`` counts
    complete-graph edges over the same steps.
    """
    out_kept: np.ndarray  # (N,)
    edges_complete: int
    bits: int

    @property
    def edges_kept(self) -> int:
        return int(self.out_kept.sum())

    @property
    def bits_complete(self) -> int:
        return self.edges_complete * self.bits

    def bits_kept(self, mask: np.ndarray | None = None) -> int:
        live = np.full(len(self.out_kept), self.bits) if mask is None else self.bits - mask.sum(-1)
        return int((self.out_kept * live).sum())

    def mcr(self, mask: np.ndarray | None = None) -> float:
        return compute_mcr(self.bits_complete, self.bits_kept(mask))

    @classmethod
    def from_state(cls, state: CommState) -> "StructureStats":
        edges = np.asarray(state.edge_samples) >= 0.5
        n_alive = int(np.asarray(state.alive_mask).sum())
        return cls(edges.sum(-1).astype(np.int64), n_alive * (n_alive - 1), state.node_means.shape[-1])

    @classmethod
    def from_edges(cls, edges: np.ndarray, alive: np.ndarray, bits: int) -> "StructureStats":
        """edges (..., N, N) with [j, k] = sender j to receiver k; alive (..., N)."""
        edges = np.asarray(edges) >= 0.5
        n_alive = np.asarray(alive).sum(-1)
        out = edges.sum(-1).reshape(-1, edges.shape[-1]).sum(0)
        return cls(out.astype(np.int64), int((n_alive * (n_alive - 1)).sum()), bits)


@dataclass
class BitBudget:
    target_mcr: float
    mask: np.ndarray  # (N, d) bool, True = bit dropped
    strategy: str = "kl_rank"
    achieved_mcr: float | None = None

    @property
    def keep(self) -> np.ndarray:
        return ~self.mask

    @property
    def masked_bits(self) -> int:
        return int(self.mask.sum())

    def to_dict(self) -> dict:
        return {"target_mcr": self.target_mcr, "mask": self.mask.astype(int).tolist(), "strategy": self.strategy,
                "achieved_mcr": self.achieved_mcr}


def importance(ledger: KLLedger, strategy: str) -> np.ndarray:
    """(N, d) importance of last-round bits; lower is dropped first."""
    if strategy == "kl_rank":
        return np.asarray(ledger.last_round_bits)
    if strategy == "abs_value":
        if ledger.mean_abs is None:
            raise ValueError("abs_value masking needs mean absolute message values")
        return np.asarray(ledger.mean_abs)
    raise ValueError(f"unknown mask strategy {strategy!r}; expected one of {MASK_STRATEGIES}")


def build_budget(ledger: KLLedger, structure: CommState | StructureStats, target_mcr: float,
                 strategy: str = "kl_rank") -> BitBudget:
    """Mask (node, bit) pairs in ascending importance until the MCR reaches ``target_mcr``.

    Pruned edges count towards the budget first; a target of 1.0 masks every bit.
    """
    if not 0 <= target_mcr <= 1:
        raise ValueError("target_mcr must lie in [0, 1]")
    stats = structure if isinstance(structure, StructureStats) else StructureStats.from_state(structure)
    imp = importance(ledger, strategy)
    mask = np.zeros(imp.shape, dtype=bool)
    if target_mcr >= 1.0:
        mask[:] = True
        achieved = stats.mcr(mask) if stats.bits_complete > 0 else 1.0
        return BitBudget(target_mcr, mask, strategy, achieved)
    if stats.bits_complete == 0:
        return BitBudget(target_mcr, mask, strategy, 0.0)
    order = rank_bits(imp)
    achieved = stats.mcr(mask)
    for node, bit in order:
        if achieved >= target_mcr:
            break
        mask[node, bit] = True
        achieved = stats.mcr(mask)
    return BitBudget(target_mcr, mask, strategy, achieved)


def k_extreme_budget(ledger: KLLedger, k: int, lowest: bool = True, strategy: str = "kl_rank") -> BitBudget:
    """Mask exactly the k least (or most) important bits."""
    imp = importance(ledger, strategy)
    order = rank_bits(imp)
    chosen = order[:k] if lowest else order[::-1][:k]
    mask = np.zeros(imp.shape, dtype=bool)
    for node, bit in chosen:
        mask[node, bit] = True
    return BitBudget(float("nan"), mask, strategy)


# ---------------------------------------------------------------- evaluation

def _trace_stats(trace, rounds: int, bits: int) -> tuple[list[StructureStats], np.ndarray, np.ndarray]:
    """Per-round structure, alive-mean per-bit KL and mean |message| from ``(CommOutput, alive)`` pairs."""
    per_round = []
    for l in range(rounds):
        stats = [StructureStats.from_edges(c.rounds[l].edges.numpy(), alive.numpy(), bits) for c, alive in trace]
        per_round.append(StructureStats(sum(s.out_kept for s in stats), sum(s.edges_complete for s in stats), bits))
    kl_sum = abs_sum = count = 0
    for c, alive in trace:
        r, a = c.rounds[-1], alive.numpy()[..., None]
        kl_sum = kl_sum + (r.bit_kl.numpy() * a).sum(0)
        abs_sum = abs_sum + (np.abs(r.sent.numpy()) * a).sum(0)
        count = count + a.sum(0)
    denom = np.maximum(count, 1)
    return per_round, kl_sum / denom, abs_sum / denom


def calibrate(agent: CommAgent, map_name: str, episodes: int = 20,
              seed_base: int = CALIBRATION_SEED_BASE) -> tuple[KLLedger, StructureStats]:
    """Unconstrained eval-mode episodes; returns an episode-mean ledger and the aggregated structure."""
    if agent.comm is None:
        raise ValueError("bit budgets need a communicating agent")
    trace: list = []
    evaluate_policy(agent, map_name, episodes, seed_base, trace=trace)
    c = agent.comm_config
    per_round, kl, ab = _trace_stats(trace, c.rounds, c.bits)
    rounds_kl = np.zeros((c.rounds, c.num_agents, c.bits))
    rounds_kl[-1] = kl
    return KLLedger({}, rounds_kl, ab), per_round[-1]


def evaluate_agent(agent: CommAgent, map_name: str, budget: BitBudget | None = None, episodes: int = 100,
                   seed_base: int = EVAL_SEED_BASE, sent_override=None) -> dict:
    """Eval-mode episodes with ``budget`` applied; returns returns and the achieved bandwidth."""
    keep = None
    if budget is not None:
        if agent.comm is None:
            raise ValueError("a bit budget needs a communicating agent")
        c = agent.comm_config
        if budget.mask.shape != (c.num_agents, c.bits):
            raise ValueError(f"budget mask shape {budget.mask.shape} does not match ({c.num_agents}, {c.bits})")
        keep = torch.as_tensor(budget.keep)
    trace: list = []
    ev = evaluate_policy(agent, map_name, episodes, seed_base, keep_bits=keep, trace=trace,
                         sent_override=sent_override)
    record = {"return_mean": ev["return_mean"], "return_std": ev["return_std"], "returns": ev["returns"],
              "actions": ev["actions"]}
    if agent.comm is None:
        record["report"] = None
        return record
    c = agent.comm_config
    per_round, _, _ = _trace_stats(trace, c.rounds, c.bits)
    last = per_round[-1]
    complete = last.edges_complete
    mask = budget.mask if budget is not None else None
    report = BandwidthReport(
        scr_per_round=[compute_scr(s.edges_complete, s.edges_kept) if s.edges_complete else 0.0 for s in per_round],
        mcr=last.mcr(mask) if complete else 0.0, edges_complete=complete, edges_kept=last.edges_kept,
        bits_complete=last.bits_complete, bits_kept=last.bits_kept(mask))
    record["report"] = report
    return record


def evaluate_constrained(checkpoint, map_name: str, budget: BitBudget | None, episodes: int = 100,
                         seed_base: int = EVAL_SEED_BASE) -> dict:
    """Load ``checkpoint`` and run :func:`evaluate_agent` on ``map_name``."""
    from .trainers.loop import load_agent
    agent, cfg = load_agent(checkpoint)
    if cfg.map != map_name:
        raise ValueError(f"checkpoint was trained on {cfg.map!r}, not {map_name!r}")
    return evaluate_agent(agent, map_name, budget, episodes, seed_base)


# ---------------------------------------------------------------- confusion matrices

def confusion_matrix(edges: np.ndarray, bits: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Entry (receiver y, sender x) = unmasked bits x sends to y over kept edge x -> y.

    ``edges`` is an (N, N) eval-mode structure with [sender, receiver] layout.
    """
    edges = np.asarray(edges) >= 0.5
    n = edges.shape[0]
    live = np.full(n, bits) if mask is None else bits - np.asarray(mask).sum(-1)
    m = (edges * live[:, None]).T.astype(np.int64)
    np.fill_diagonal(m, 0)
    return m


def confusion_from_trace(trace, step: int, env: int, bits: int, mask: np.ndarray | None = None) -> np.ndarray:
    comm, _ = trace[step]
    return confusion_matrix(comm.rounds[-1].edges[env].numpy(), bits, mask)


def dump_confusion(matrix: np.ndarray, path: str | Path, **meta) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"matrix": np.asarray(matrix).tolist(), "axes": ["receiver", "sender"], **meta},
                               indent=2))
    return path
