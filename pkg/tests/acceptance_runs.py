"""Training runs behind the learning-level acceptance checks.

Run this file directly to train everything up front (several hours on one
core); the acceptance tests then reuse the finished manifests by config hash.

    python tests/acceptance_runs.py [name ...]
"""

from __future__ import annotations

import os
import sys
import time
from pathlib import Path

from cgibnet.config import RunConfig
from cgibnet.harness import run_experiment

SEEDS = (0, 1, 2, 3, 4)
ROOT = Path(os.environ.get("CGIB_ACCEPTANCE_DIR", Path(__file__).resolve().parents[1] / "runs" / "acceptance"))


def configs() -> dict[str, RunConfig]:
    base = RunConfig(seeds=SEEDS)
    runs = {
        "mappo_easy": base.with_overrides({"name": "mappo_easy"}),
        "mappo_easy_bs0.01": base.with_overrides({"name": "mappo_easy_bs0.01", "comm.beta_S": 0.01}),
        "mappo_easy_bs0.5": base.with_overrides({"name": "mappo_easy_bs0.5", "comm.beta_S": 0.5}),
        "qmix_easy": base.with_overrides({"name": "qmix_easy", "framework": "qmix"}),
        "qmix_easy_nocomm": base.with_overrides({"name": "qmix_easy_nocomm", "framework": "qmix",
                                                 "comm_mode": "none"}),
        "mappo_easy_L2": base.with_overrides({"name": "mappo_easy_L2", "comm.rounds": 2, "seeds": [0]}),
    }
    return {k: v.validate() for k, v in runs.items()}


def ensure(name: str, progress=None):
    """Finished manifest for ``name``, training whatever is missing."""
    return run_experiment(configs()[name], ROOT, progress=progress)


if __name__ == "__main__":
    names = sys.argv[1:] or list(configs())
    for name in names:
        t = time.time()
        m = ensure(name, progress=lambda r, n=name: print(f"{n} it {r['iteration']} return {r['return_mean']:.1f} "
                                                          f"scr {r['scr']:.2f}", flush=True))
        print(f"{name}: {m.status} in {time.time() - t:.0f}s {m.error or ''}", flush=True)
