"""
Training MAPPO with a compressed communication graph
====================================================

A short MAPPO run on the easy map, followed by the bandwidth battery used for
the result tables: an unconstrained evaluation that measures SCR, then
evaluations with message bits masked until the overall compression ratio
(MCR) reaches 50%, 75% and 100%. The full-length equivalent is::

    cgibnet train --set name=easy_mappo
    cgibnet aggregate easy_mappo

This demo trains for only a couple of minutes, so its returns are far from
converged.
"""

# %%
# Train 150 rollout batches of 500 environment steps each. Metrics are
# written as JSON lines next to the checkpoints.
import json
import tempfile
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np

from cgibnet.config import RunConfig
from cgibnet.trainers.loop import train

out = Path(tempfile.mkdtemp())
cfg = RunConfig(name="demo").with_overrides({"iterations": 150, "eval.interval": 25, "eval.episodes": 20})
result = train(cfg, seed=0, run_dir=out / "seed_0",
               progress=lambda r: print(f"iter {r['iteration']:>4}  return {r['return_mean']:8.1f}  "
                                        f"SCR {100 * r['scr']:5.1f}%  SIB {r['sib']:.4f}"))
log = [json.loads(line) for line in result.metrics_path.read_text().splitlines()]
fig, ax = plt.subplots(figsize=(5, 3))
ax.plot([r["iteration"] for r in log], [r["return_mean"] for r in log], "o-")
ax.set_xlabel("iteration")
ax.set_ylabel("evaluation return")

# %%
# The bandwidth battery. Budgets are built on calibration episodes that are
# disjoint from the evaluation seeds: bits are masked in ascending order of
# their mean KL until the target MCR is met.
from cgibnet.harness import evaluation_battery

battery = evaluation_battery(result.last_checkpoint, cfg, episodes=50, out_dir=out)
for key in ("mcr_0", "mcr_0.5", "mcr_0.75", "mcr_1"):
    rep = battery[key].get("report", {})
    print(f"{key:>9}: return {battery[key]['return_mean']:8.1f}   achieved MCR {100 * rep.get('mcr', 0):5.1f}%")
print("per-bit KL (rows = agent):")
print(np.round(np.array(battery["bit_kl"]), 3))

# %%
# Who sends how many live bits to whom at one step of an evaluation episode,
# before and after the 75% budget.
from cgibnet.harness.plots import confusion_heatmap

for path in sorted(out.glob("confusion_*.json")):
    print(path.name, json.loads(path.read_text())["matrix"])
    confusion_heatmap(path, out, "demo")
plt.show()
