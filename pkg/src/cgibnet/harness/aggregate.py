"""Seed aggregation into table rows shaped like the bandwidth tables."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .experiment import RunManifest

COLUMNS = ("scr", "R@SCR", "R@MCR50", "R@MCR75", "R@MCR100")
_BATTERY_KEYS = {"R@SCR": "mcr_0", "R@MCR50": "mcr_0.5", "R@MCR75": "mcr_0.75", "R@MCR100": "mcr_1"}


def _settings(m: RunManifest) -> dict:
    c = m.config
    return {"name": m.name, "framework": c["framework"], "map": c["map"], "comm_mode": c["comm_mode"],
            "beta_S": c["comm"]["beta_S"], "beta_X": c["comm"]["beta_X"], "rounds": c["comm"]["rounds"]}


def seed_row(report: dict) -> dict:
    row = {}
    base = report["mcr_0"]
    rounds = base.get("report", {}).get("scr_per_round", [0.0]) if base.get("report") else [0.0]
    row["scr"] = rounds[0]
    row["scr_per_round"] = rounds
    for col, key in _BATTERY_KEYS.items():
        if key in report:
            row[col] = report[key]["return_mean"]
    return row


def aggregate(manifests) -> list[dict]:
    """One row per manifest with per-cell means (and stds) over its seeds.

    Manifests must share framework and map; incompatible mixes are a usage error.
    """
    manifests = [m if isinstance(m, RunManifest) else RunManifest.read(m) for m in manifests]
    if not manifests:
        raise ValueError("aggregate needs at least one manifest")
    done = [m for m in manifests if m.complete]
    if not done:
        raise ValueError("no completed manifests to aggregate")
    kinds = {(m.config["framework"], m.config["map"]) for m in done}
    if len(kinds) > 1:
        raise ValueError(f"cannot aggregate manifests from different framework/map settings: {sorted(kinds)}")
    rows = []
    for m in done:
        per_seed = [seed_row(m.reports[str(s)]) for s in m.seeds]
        row = {**_settings(m), "seeds": list(m.seeds), "config_hash": m.config_hash}
        for col in COLUMNS:
            vals = [r[col] for r in per_seed if col in r]
            if vals:
                row[col] = float(np.mean(vals))
                row[col + "_std"] = float(np.std(vals))
        per_round = np.array([r["scr_per_round"] for r in per_seed], dtype=float)
        row["scr_per_round"] = per_round.mean(0).tolist()
        rows.append(row)
    return rows


def sweep_triples(rows: list[dict], key: str = "beta_S") -> list[tuple[float, float, float]]:
    """(swept value, SCR, R@MCR75) sorted by the swept value."""
    return sorted((r[key], r["scr"], r.get("R@MCR75", float("nan"))) for r in rows)


def format_table(rows: list[dict]) -> str:
    head = ["name", "SCR", "R@SCR", "R@MCR50", "R@MCR75", "R@MCR100"]
    w = max([len(r["name"]) for r in rows] + [12])
    lines = [f"{head[0]:<{w}}  " + "  ".join(f"{h:>12}" for h in head[1:])]
    for r in rows:
        scr = "/".join(f"{100 * s:.0f}%" for s in r["scr_per_round"])
        cells = [scr] + [f"{r[c]:.1f}" if c in r else "-" for c in COLUMNS[1:]]
        lines.append(f"{r['name']:<{w}}  " + "  ".join(f"{c:>12}" for c in cells))
    return "\n".join(lines)


def write_table(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rows, indent=2, sort_keys=True))
    return path
