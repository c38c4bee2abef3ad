"""Training curves, sweep curves and confusion heatmaps as PNG files."""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .aggregate import aggregate, sweep_triples  # noqa: E402
from .experiment import RunManifest  # noqa: E402


def _read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def training_curve(manifest: RunManifest, out_dir: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for seed, art in manifest.artifacts.items():
        recs = [r for r in _read_log(art["metrics"]) if "return_mean" in r]
        ax.plot([r["iteration"] for r in recs], [r["return_mean"] for r in recs], label=f"seed {seed}", lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("evaluation return")
    ax.set_title(manifest.name)
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = out_dir / f"curve_{manifest.config_hash}.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def sweep_plot(rows: list[dict], out_dir: Path, key: str = "beta_S") -> Path:
    xs, scr, ret = zip(*sweep_triples(rows, key))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ret, "o-", color="tab:blue")
    ax.set_xscale("log")
    ax.set_xlabel(key)
    ax.set_ylabel("return at MCR=75%", color="tab:blue")
    twin = ax.twinx()
    twin.plot(xs, [100 * s for s in scr], "s--", color="tab:red")
    twin.set_ylabel("SCR (%)", color="tab:red")
    fig.tight_layout()
    digest = "_".join(r["config_hash"][:6] for r in rows)
    path = out_dir / f"sweep_{key}_{digest}.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def confusion_heatmap(json_path: Path, out_dir: Path, tag: str) -> Path:
    data = json.loads(Path(json_path).read_text())
    m = np.array(data["matrix"])
    fig, ax = plt.subplots(figsize=(3.5, 3))
    im = ax.imshow(m, cmap="Blues", vmin=0)
    ax.set_xlabel("sender")
    ax.set_ylabel("receiver")
    for (y, x), v in np.ndenumerate(m):
        ax.text(x, y, str(v), ha="center", va="center", fontsize=7)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    path = out_dir / f"{Path(json_path).stem}_{tag}.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit_plots(manifests, out_dir: str | Path) -> list[Path]:
    """Curves for every manifest, a sweep plot when the beta_S values differ, and confusion heatmaps."""
    manifests = [m if isinstance(m, RunManifest) else RunManifest.read(m) for m in manifests]
    manifests = [m for m in manifests if m.artifacts]
    if not manifests:
        warnings.warn("emit_plots: no records to plot")
        return []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = [training_curve(m, out_dir) for m in manifests]
    done = [m for m in manifests if m.complete]
    if len({m.config["comm"]["beta_S"] for m in done}) > 1:
        files.append(sweep_plot(aggregate(done), out_dir))
    for m in done:
        for seed, art in m.artifacts.items():
            for js in sorted(Path(art["report"]).parent.glob("confusion_*.json")):
                files.append(confusion_heatmap(js, out_dir, f"{m.config_hash}_s{seed}"))
    return files
