import numpy as np
import pytest
import torch

from cgibnet.approximators import (
    EdgePredictor, GaussianHead, MeanPoolAggregator, MonotonicMixer, ObsEncoder, RecurrentCore,
    grad_check, load_checkpoint, mixer_monotonicity_probe, mlp, save_checkpoint,
)


@pytest.fixture(autouse=True)
def _double_precision():
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(torch.float32)


def rand(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_grad_check_constant_map():
    theta = torch.tensor([1.5, -2.0], requires_grad=True)
    report = grad_check(lambda: torch.tensor(3.0) + 0 * theta.sum(), [theta])
    assert report.passed and report.max_rel_err == 0.0


def test_grad_check_square():
    theta = torch.tensor([3.0], requires_grad=True)
    report = grad_check(lambda: (theta ** 2).sum(), [theta], tolerance=1e-8)
    assert report.passed and report.max_rel_err < 1e-8


def test_grad_check_detects_wrong_gradient():
    theta = torch.tensor([2.0], requires_grad=True)

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x ** 2

        @staticmethod
        def backward(ctx, g):
            return g * 3.0

    report = grad_check(lambda: Wrong.apply(theta).sum(), [theta])
    assert not report.passed


def test_grad_check_requires_double():
    theta = torch.tensor([1.0], dtype=torch.float32, requires_grad=True)
    with pytest.raises(TypeError):
        grad_check(lambda: theta.sum(), [theta])


def test_grad_check_reports_nonfinite():
    theta = torch.tensor([0.0], requires_grad=True)
    with pytest.raises(FloatingPointError):
        grad_check(lambda: (1 / theta).sum(), [theta])


def test_random_two_layer_encoder_passes():
    torch.manual_seed(0)
    net = mlp([5, 7, 3])
    x = rand(4, 5)
    assert grad_check(lambda: net(x).pow(2).sum(), dict(net.named_parameters())).passed


@pytest.mark.parametrize("build,call", [
    (lambda: ObsEncoder(6, 5), lambda m, x: m(x).pow(2).sum()),
    (lambda: EdgePredictor(6, 5), lambda m, x: m(x).sin().sum()),
    (lambda: GaussianHead(6, 2, 5), lambda m, x: sum(t.pow(2).sum() for t in m(x))),
    (lambda: RecurrentCore(6, 5), lambda m, x: m.unroll(x.unsqueeze(1).repeat(1, 2, 1)).pow(2).sum()),
])
def test_shipped_architectures_pass_grad_check(build, call):
    torch.manual_seed(1)
    m = build()
    x = rand(3, 6, seed=2)
    report = grad_check(lambda: call(m, x), dict(m.named_parameters()))
    assert report.passed, report
    # no dead parameter segments
    m.zero_grad()
    call(m, x).backward()
    assert all(p.grad is not None and p.grad.abs().sum() > 0 for p in m.parameters())


def test_aggregator_and_mixer_pass_grad_check():
    torch.manual_seed(3)
    agg = MeanPoolAggregator(own_dim=4, bits=2)
    msgs, own = rand(3, 2, seed=4), rand(3, 4, seed=5)
    w = torch.rand(3, 3, generator=torch.Generator().manual_seed(6), dtype=torch.float64) * (1 - torch.eye(3))
    assert grad_check(lambda: agg(msgs, w, own).pow(2).sum(), dict(agg.named_parameters())).passed

    mixer = MonotonicMixer(3, 5, mixer_hidden_dim=4, hyper_hidden_dim=6)
    qs, s = rand(7, 3, seed=7), rand(7, 5, seed=8)
    report = grad_check(lambda: mixer(qs, s).pow(2).sum(), dict(mixer.named_parameters()))
    assert report.passed, report


def test_recurrent_core_zero_state_and_orthogonal_init():
    core = RecurrentCore(3, 64)
    h0 = core.initial_state(2)
    assert h0.shape == (2, 64) and torch.all(h0 == 0)
    w = core.cell.weight_hh[:64]
    assert torch.allclose(w @ w.T, torch.eye(64), atol=1e-5)
    out = core.unroll(rand(5, 2, 3))
    assert out.shape == (5, 2, 64)


def test_same_seed_same_initialisation():
    torch.manual_seed(11)
    a = MonotonicMixer(2, 4)
    torch.manual_seed(11)
    b = MonotonicMixer(2, 4)
    assert all(torch.equal(x, y) for x, y in zip(a.parameters(), b.parameters()))


def test_identity_mixer_partials_are_one():
    report = mixer_monotonicity_probe(lambda q, s: q.sum(-1), num_agents=3, state_dim=2, trials=50)
    assert report.min_partial == pytest.approx(1.0, abs=1e-8)


def test_monotonic_mixer_probe_1000_trials():
    torch.manual_seed(5)
    mixer = MonotonicMixer(4, 6)
    report = mixer_monotonicity_probe(mixer, 4, 6, trials=1000)
    assert report.min_partial >= -1e-6


class NegatedMixer(MonotonicMixer):
    def weight_transform(self, w, layer):
        return -torch.abs(w) if layer == 1 else torch.abs(w)


def test_probe_detects_negated_weights():
    torch.manual_seed(5)
    report = mixer_monotonicity_probe(NegatedMixer(4, 6), 4, 6, trials=200)
    assert report.min_partial < 0


def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(0)
    mods = {"enc": ObsEncoder(4, 3), "mix": MonotonicMixer(2, 4, 3, 5)}
    arch = {"obs_dim": 4, "embed": 3}
    save_checkpoint(tmp_path / "ck", mods, arch, seed=7)
    torch.manual_seed(1)
    fresh = {"enc": ObsEncoder(4, 3), "mix": MonotonicMixer(2, 4, 3, 5)}
    manifest = load_checkpoint(tmp_path / "ck", fresh, arch)
    assert manifest["seed"] == 7
    for k in mods:
        for x, y in zip(mods[k].parameters(), fresh[k].parameters()):
            assert torch.equal(x, y)


def test_checkpoint_rejects_mismatched_signature(tmp_path):
    save_checkpoint(tmp_path / "ck", {"enc": ObsEncoder(4, 3)}, {"obs_dim": 4}, seed=0)
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "ck", {"enc": ObsEncoder(5, 3)}, {"obs_dim": 4})
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "ck", {"enc": ObsEncoder(4, 3)}, {"obs_dim": 5})
