"""
The same communication layer under QMIX
=======================================

Nothing in the communication layer is specific to policy gradients: under
QMIX the aggregated messages feed each agent's utility network, the two KL
terms are added to the TD loss, and the sampling noise of every stored
episode is replayed when the loss is recomputed from the buffer. This demo
trains briefly with and without communication and compares the evaluation
curves. Full-length runs use ``cgibnet train --set framework=qmix``.
"""

# %%
import json
import tempfile
from pathlib import Path

import matplotlib.pyplot as plt

from cgibnet.config import RunConfig
from cgibnet.trainers.loop import train

out = Path(tempfile.mkdtemp())
curves = {}
for mode in ("cgibnet", "none"):
    cfg = RunConfig(name=f"qmix_{mode}", framework="qmix", comm_mode=mode).with_overrides(
        {"iterations": 120, "eval.interval": 20, "eval.episodes": 20})
    res = train(cfg, seed=0, run_dir=out / mode)
    curves[mode] = [json.loads(line) for line in res.metrics_path.read_text().splitlines()]
    last = curves[mode][-1]
    print(f"{mode:>8}: final return {last['return_mean']:8.1f}  epsilon {last['loss']['epsilon']:.2f}")

# %%
# Each iteration collects four episodes and makes one update per episode, so
# 120 iterations are 480 episodes; epsilon reaches its floor after the first
# 20% of them. Expect noisy curves this early.
fig, ax = plt.subplots(figsize=(5, 3))
for mode, log in curves.items():
    ax.plot([4 * r["iteration"] for r in log], [r["return_mean"] for r in log], "o-", label=mode)
ax.set_xlabel("episodes")
ax.set_ylabel("evaluation return")
ax.legend()
plt.show()
