import json
import warnings

import pytest

from cgibnet.config import BETA_S_GRID, BETA_X_GRID, ConfigError, RunConfig, load_config
from cgibnet.harness import aggregate, emit_plots, run_experiment, sweep_triples
from cgibnet.harness.cli import main
from cgibnet.harness.experiment import RunManifest


def test_defaults_match_published_settings():
    cfg = RunConfig()
    assert (cfg.comm.beta_S, cfg.comm.beta_X, cfg.comm.bits, cfg.comm.rounds, cfg.gamma) == (0.1, 0.001, 5, 1, 0.99)
    assert BETA_S_GRID == (0.01, 0.05, 0.1, 0.5, 1.0)
    assert BETA_X_GRID == (0.0005, 0.001, 0.005, 0.01)
    assert cfg.total_iterations == 3000
    assert RunConfig(map="hard").total_iterations == 10000
    assert RunConfig(framework="qmix").total_iterations * cfg.qmix.envs_per_iteration == 3000


def test_config_round_trip(tmp_path):
    cfg = RunConfig(name="x", seeds=(1, 2)).with_overrides({"comm.beta_S": 0.5, "eval.mcr_battery": [0.5]})
    assert RunConfig.from_json(cfg.to_json()) == cfg
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg
    assert load_config(path, {"comm.tau": 0.5}).comm.tau == 0.5


def test_negative_beta_is_a_validation_error():
    with pytest.raises(ConfigError) as info:
        RunConfig().with_overrides({"comm.beta_S": -0.1, "map": "tiny"}).validate()
    assert set(info.value.keys) == {"comm.beta_S", "map"}


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"comm.beta_Z": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"bogus": 1})


def test_hash_ignores_name_only():
    a, b = RunConfig(name="a"), RunConfig(name="b")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != a.with_overrides({"comm.beta_S": 0.5}).config_hash()


def tiny(name, **over):
    base = {"iterations": 2, "eval.interval": 2, "eval.episodes": 2, "eval.final_episodes": 3,
            "mappo.batch_size": 20, "seeds": [0, 1]}
    base.update(over)
    return RunConfig(name=name).with_overrides(base)


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    a = run_experiment(tiny("a"), root)
    b = run_experiment(tiny("b", **{"comm.beta_S": 0.5}), root)
    return root, a, b


def test_run_experiment_writes_manifest_and_battery(runs):
    root, a, _ = runs
    assert a.complete and a.seeds == [0, 1] and a.message_formula == "conventional"
    on_disk = RunManifest.read(root / "a")
    assert on_disk.config_hash == a.config_hash
    for seed in ("0", "1"):
        rep = a.reports[seed]
        assert {"mcr_0", "mcr_0.5", "mcr_0.75", "mcr_1"} <= set(rep)
        assert rep["mcr_1"]["report"]["bits_kept"] == 0
        assert (root / "a" / f"seed_{seed}" / "metrics.jsonl").exists()


def test_rerun_is_byte_identical(runs, tmp_path):
    root, a, _ = runs
    again = run_experiment(tiny("a"), tmp_path)
    for seed in ("0", "1"):
        first = open(a.artifacts[seed]["metrics"], "rb").read()
        second = open(again.artifacts[seed]["metrics"], "rb").read()
        assert first == second


def test_finished_manifest_is_reused(runs):
    root, a, _ = runs
    assert run_experiment(tiny("a"), root).started == a.started


def test_aggregate_single_and_means(runs):
    root, a, b = runs
    (row,) = aggregate([a])
    seeds = [a.reports[s]["mcr_0"]["return_mean"] for s in ("0", "1")]
    assert row["R@SCR"] == pytest.approx(sum(seeds) / 2)
    rows = aggregate([a, b])
    assert [t[0] for t in sweep_triples(rows)] == [0.1, 0.5]


def test_aggregate_rejects_incompatible_configs(runs, tmp_path):
    _, a, _ = runs
    other = run_experiment(tiny("q", framework="qmix", **{"qmix.batch_size": 2, "qmix.envs_per_iteration": 2,
                                                            "seeds": [0]}), tmp_path)
    with pytest.raises(ValueError):
        aggregate([a, other])


def test_failed_run_is_marked(tmp_path, monkeypatch):
    from cgibnet.harness import experiment

    def boom(*a, **k):
        raise RuntimeError("disk full")
    monkeypatch.setattr(experiment, "evaluation_battery", boom)
    m = run_experiment(tiny("f"), tmp_path)
    assert m.status == "failed" and "disk full" in m.error
    assert (tmp_path / "f" / "seed_0" / "metrics.jsonl").exists()


def test_emit_plots(runs, tmp_path):
    _, a, b = runs
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert emit_plots([], tmp_path) == []
    assert caught
    files = emit_plots([a], tmp_path / "one")
    assert sum(f.name.startswith("curve_") for f in files) == 1
    files = emit_plots([a, b], tmp_path / "two")
    assert any(f.name.startswith("sweep_beta_S") for f in files)
    assert any(f.name.startswith("confusion_") for f in files)
    assert all(f.stat().st_size > 0 for f in files)


def test_cli_verbs(runs, tmp_path, monkeypatch, capsys):
    root, a, _ = runs
    monkeypatch.setenv("CGIB_RUNS_DIR", str(root))
    assert main(["render", "--seed", "2"]) == 0
    assert "return" in capsys.readouterr().out
    assert main(["aggregate", "a", "b", "--out", str(tmp_path / "t.json")]) == 0
    assert len(json.loads((tmp_path / "t.json").read_text())) == 2
    assert "R@MCR75" in capsys.readouterr().out
    assert main(["eval", "--checkpoint", a.artifacts["0"]["checkpoint"], "--mcr", "0.5", "--episodes", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["report"]["mcr"] >= 0.5
    assert main(["plot", "a", "--out", str(tmp_path / "p")]) == 0
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(tiny("cli").to_json())
    assert main(["train", "--config", str(cfg_path), "--seeds", "0"]) == 0
    assert main(["sweep", "--config", str(cfg_path), "--seeds", "0", "--values", "0.01"]) == 0
    assert (root / "cli_comm.beta_S=0.01" / "manifest.json").exists()
