"""Command-line verbs: train, eval, sweep, aggregate, plot, render.

Artifacts go under ``$CGIB_RUNS_DIR`` (default ``./runs``). Settings resolve
as ``--set key=value`` > ``--config file.json`` > defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..config import RunConfig, load_config
from ..trainers.loop import runs_root


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {pair!r}")
        out[key] = _parse_value(value)
    return out


def _config(args) -> RunConfig:
    overrides = _overrides(args.set)
    if getattr(args, "seeds", None):
        overrides["seeds"] = args.seeds
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    from .experiment import run_experiment
    cfg = _config(args)

    def progress(rec):
        print(f"iter {rec['iteration']:>6}  return {rec['return_mean']:8.2f}  scr {100 * rec['scr']:5.1f}%",
              flush=True)
    m = run_experiment(cfg, reuse=not args.fresh, progress=progress)
    print(f"{m.status}: {runs_root() / m.name / 'manifest.json'}")
    if m.error:
        print(m.error, file=sys.stderr)
    return 0 if m.complete else 1


def cmd_eval(args) -> int:
    from ..bandwidth_eval import build_budget, calibrate, evaluate_agent
    from ..trainers.loop import load_agent
    agent, cfg = load_agent(args.checkpoint)
    budget = None
    if args.mcr > 0:
        ledger, structure = calibrate(agent, cfg.map, episodes=cfg.eval.episodes)
        budget = build_budget(ledger, structure, args.mcr, args.mask_strategy)
    rec = evaluate_agent(agent, cfg.map, budget, args.episodes)
    out = {"return_mean": rec["return_mean"], "return_std": rec["return_std"],
           "report": rec["report"].to_dict() if rec["report"] else None}
    print(json.dumps(out, indent=2))
    return 0


def cmd_sweep(args) -> int:
    from .experiment import run_experiment
    base = _config(args)
    status = 0
    for value in args.values:
        cfg = base.with_overrides({args.param: _parse_value(value), "name": f"{base.name}_{args.param}={value}"})
        m = run_experiment(cfg.validate())
        print(f"{cfg.name}: {m.status}")
        status |= not m.complete
    return status


def _manifest_paths(names) -> list[Path]:
    root = runs_root()
    if names:
        return [root / n / "manifest.json" for n in names]
    return sorted(root.glob("*/manifest.json"))


def cmd_aggregate(args) -> int:
    from .aggregate import aggregate, format_table, write_table
    rows = aggregate(_manifest_paths(args.runs))
    print(format_table(rows))
    if args.out:
        write_table(rows, args.out)
    return 0


def cmd_plot(args) -> int:
    from .plots import emit_plots
    files = emit_plots([p for p in _manifest_paths(args.runs) if p.exists()], args.out or runs_root() / "plots")
    for f in files:
        print(f)
    return 0


def cmd_render(args) -> int:
    from ..traffic_env import run_text_episode
    if args.render != "text":
        raise SystemExit("only --render text is supported")
    m = run_text_episode(args.map, args.seed, args.policy)
    print(f"return {m.ret:.1f}  collisions {m.collisions}  success {m.success}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgibnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-key override, repeatable")
        sp.add_argument("--seeds", type=int, nargs="+")

    t = sub.add_parser("train", help="train every seed and run the evaluation battery")
    with_config(t)
    t.add_argument("--fresh", action="store_true", help="ignore a finished manifest with the same config")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint under a bandwidth budget")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--mcr", type=float, default=0.0, choices=[0.0, 0.5, 0.75, 1.0])
    e.add_argument("--mask-strategy", default="kl_rank", choices=["kl_rank", "abs_value"])
    e.add_argument("--episodes", type=int, default=100)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep", help="one experiment per value of a config key")
    with_config(s)
    s.add_argument("--param", default="comm.beta_S")
    s.add_argument("--values", nargs="+", required=True)
    s.set_defaults(fn=cmd_sweep)

    a = sub.add_parser("aggregate", help="table of seed means over finished runs")
    a.add_argument("runs", nargs="*", help="run names (default: every run under the artifact root)")
    a.add_argument("--out", help="write rows as JSON")
    a.set_defaults(fn=cmd_aggregate)

    pl = sub.add_parser("plot", help="training curves, sweep curves, confusion heatmaps")
    pl.add_argument("runs", nargs="*")
    pl.add_argument("--out")
    pl.set_defaults(fn=cmd_plot)

    r = sub.add_parser("render", help="play one episode with a scripted policy and print the grid")
    r.add_argument("--map", default="easy")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--policy", default="move", choices=["move", "stop", "random"])
    r.add_argument("--render", default="text")
    r.set_defaults(fn=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
