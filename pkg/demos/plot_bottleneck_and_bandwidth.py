"""
Structure and message bottlenecks, and what they save
=====================================================

Each communication round scores every directed edge with a Bernoulli
probability alpha and every sender with a Gaussian code of ``d`` bits. Two
KL terms pull these towards uninformative priors: Bernoulli(0.5) for edges,
N(0, I) for bits. Edges whose alpha falls below one half are dropped at
evaluation time, and bits with little KL are the first to be masked when
bandwidth is capped.
"""

# %%
# The two closed-form regularisers. The edge term is zero at alpha = 0.5 and
# reaches ln 2 for a certain edge; the bit term is zero only at the prior.
import matplotlib.pyplot as plt
import numpy as np
import torch

from cgibnet.gib_comm import kl_bernoulli_vs_half, kl_diag_gaussian_vs_standard, sample_edge

alpha = np.linspace(0.01, 0.99, 99)
mu = np.linspace(-3, 3, 121)
fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3))
a.plot(alpha, [kl_bernoulli_vs_half(x) for x in alpha])
a.axhline(np.log(2), ls=":", c="gray")
a.set_xlabel("alpha")
a.set_title("KL(Bern(alpha) || Bern(0.5))")
for s in (0.5, 1.0, 2.0):
    b.plot(mu, [kl_diag_gaussian_vs_standard([m], [s]).item() for m in mu], label=f"sigma={s}")
b.set_xlabel("mu")
b.set_title("KL(N(mu, sigma^2) || N(0, 1))")
b.legend()
fig.tight_layout()

# %%
# During training an edge is a relaxed Bernoulli draw so gradients reach
# alpha. At temperature 1 and alpha = 0.5 the draw is uniform on (0, 1);
# a confident alpha concentrates it near 0 or 1.
g = torch.Generator().manual_seed(0)
fig, ax = plt.subplots(figsize=(5, 3))
for p in (0.1, 0.5, 0.9):
    draws = sample_edge(torch.full((20000,), p), tau=1.0, generator=g)
    ax.hist(draws.numpy(), bins=50, histtype="step", density=True, label=f"alpha={p}")
ax.set_xlabel("relaxed edge value")
ax.legend()

# %%
# The worked bandwidth example: three agents, four of the six possible
# edges kept, three bits per message. Pruning two edges gives SCR = 33.33%;
# masking two bits of agent 0 (sent on two edges) and one bit of agent 1
# leaves 7 of 18 bits, MCR = 61.11%.
from cgibnet.bandwidth_eval import StructureStats, compute_mcr, compute_scr, confusion_matrix

edges = np.zeros((3, 3))
for j, k in [(0, 1), (0, 2), (1, 2), (2, 0)]:
    edges[j, k] = 1
structure = StructureStats.from_edges(edges, np.ones(3, bool), bits=3)
mask = np.zeros((3, 3), bool)
mask[0, :2] = True
mask[1, 0] = True
print(f"SCR = {100 * compute_scr(6, structure.edges_kept):.2f}%")
print(f"bits kept {structure.bits_kept(mask)} of {structure.bits_complete}, MCR = {100 * structure.mcr(mask):.2f}%")
print(f"MCR from counts: {100 * compute_mcr(18, 7):.2f}%")
print("live bits, rows = receiver, columns = sender:")
print(confusion_matrix(edges, 3, mask))

# %%
# One forward pass of an untrained communication layer on random
# embeddings. The ledger keeps the KL of every edge and every bit; the bit
# ranking it induces is what a bandwidth budget masks from the bottom up.
from cgibnet.gib_comm import CommConfig, GIBComm, communicate, rank_bits

torch.manual_seed(0)
comm = GIBComm(CommConfig(num_agents=4, bits=5), embed_dim=8)
emb = torch.randn(4, 8)
messages, states, ledger = communicate(comm, emb, np.ones(4, bool), eval_mode=True)
print("alpha:\n", np.round(states[0].edge_probs, 3))
print(f"SIB {ledger.sib_total:.4f}  XIB {ledger.xib_total:.4f}")
print("five least informative (node, bit):", rank_bits(ledger)[:5])
plt.show()
