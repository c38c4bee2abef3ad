import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from cgibnet.approximators import SIGMA_UNIT_BIAS, grad_check
from cgibnet.gib_comm import (
    CommConfig, CommNoise, GIBComm, KLLedger, communicate, kl_bernoulli_vs_half,
    kl_diag_gaussian_vs_standard, rank_bits, sample_edge, sample_node_message,
)


def make_comm(n=3, d=2, rounds=1, embed=4, seed=0, dtype=torch.float64, **kw):
    torch.manual_seed(seed)
    cfg = CommConfig(num_agents=n, bits=d, rounds=rounds, hidden_dim=6, **kw)
    return GIBComm(cfg, embed).to(dtype), cfg


def bernoulli_kl_by_enumeration(a):
    return sum(p * math.log(p / 0.5) for p in (a, 1 - a))


def gaussian_kl_by_quadrature(mu, sigma):
    p = stats.norm(mu, sigma)
    f = lambda x: p.pdf(x) * (p.logpdf(x) - stats.norm.logpdf(x))
    lo, hi = mu - 12 * sigma, mu + 12 * sigma
    return integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200)[0]


# --- closed-form KL terms -------------------------------------------------

def test_bernoulli_kl_examples():
    assert kl_bernoulli_vs_half(0.5) == 0.0
    assert kl_bernoulli_vs_half(1 - 1e-12) == pytest.approx(math.log(2), abs=1e-4)
    assert kl_bernoulli_vs_half(0.9) == pytest.approx(0.3681, abs=5e-5)


def test_bernoulli_kl_matches_enumeration():
    rng = np.random.default_rng(0)
    for a in rng.uniform(0.001, 0.999, 100):
        assert kl_bernoulli_vs_half(a) == pytest.approx(bernoulli_kl_by_enumeration(a), abs=1e-12)
        assert kl_bernoulli_vs_half(torch.tensor(a)).item() == pytest.approx(kl_bernoulli_vs_half(a), abs=1e-12)


def test_bernoulli_kl_rejects_nan():
    with pytest.raises(FloatingPointError):
        kl_bernoulli_vs_half(float("nan"))


def test_gaussian_kl_examples():
    assert kl_diag_gaussian_vs_standard([0.0], [1.0]).item() == 0.0
    assert kl_diag_gaussian_vs_standard([1.0], [1.0]).item() == pytest.approx(0.5)
    assert kl_diag_gaussian_vs_standard([0.0], [2.0]).item() == pytest.approx(0.8069, abs=5e-5)


def test_gaussian_kl_matches_quadrature():
    rng = np.random.default_rng(1)
    for mu, sigma in zip(rng.normal(0, 1.5, 20), rng.uniform(0.2, 3.0, 20)):
        got = kl_diag_gaussian_vs_standard([mu], [sigma]).item()
        assert got == pytest.approx(gaussian_kl_by_quadrature(mu, sigma), abs=1e-6)


def test_gaussian_kl_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        kl_diag_gaussian_vs_standard([0.0], [0.0])


@given(st.floats(1e-5, 1 - 1e-5), st.floats(-5, 5), st.floats(0.05, 5))
def test_kl_terms_nonnegative(a, mu, sigma):
    assert kl_bernoulli_vs_half(a) >= 0
    assert kl_diag_gaussian_vs_standard([mu], [sigma]).item() >= 0


# --- sampling ---------------------------------------------------------------

def test_edge_sample_symmetric_at_half():
    for tau in (0.1, 1.0, 7.0):
        assert sample_edge(0.5, tau, u=0.5).item() == pytest.approx(0.5)


def test_edge_sample_saturation_at_low_temperature():
    # A draw is within 1e-3 of {0, 1} unless |logit(a) + noise| < tau * ln(999);
    # the fraction of such draws must match that exact probability.
    tau = 0.01
    gen = torch.Generator().manual_seed(0)
    for a in (0.2, 0.5, 0.9):
        s = sample_edge(torch.full((100_000,), a, dtype=torch.float64), tau, generator=gen)
        near = ((s < 1e-3) | (s > 1 - 1e-3)).double().mean().item()
        width = tau * math.log(999)
        logit = math.log(a / (1 - a))
        p_far = stats.logistic.cdf(width - logit) - stats.logistic.cdf(-width - logit)
        se = math.sqrt(p_far * (1 - p_far) / 100_000)
        assert near == pytest.approx(1 - p_far, abs=4 * se)
        assert p_far < 0.04


def test_edge_sample_hard_threshold_mean():
    gen = torch.Generator().manual_seed(3)
    s = sample_edge(torch.full((100_000,), 0.8, dtype=torch.float64), 1.0, generator=gen)
    assert (s > 0.5).double().mean().item() == pytest.approx(0.8, abs=0.01)


def test_edge_sample_eval_mode_is_hard():
    assert sample_edge(0.51, 1.0, eval_mode=True).item() == 1.0
    assert sample_edge(0.49, 1.0, eval_mode=True).item() == 0.0


def test_printed_message_formula_returns_sigma_for_zero_mean():
    eps = torch.tensor([3.0, -2.0, 0.5], dtype=torch.float64)
    sigma = torch.full((3,), 1e-4, dtype=torch.float64)
    out = sample_node_message(torch.zeros(3, dtype=torch.float64), sigma, eps, formula="printed")
    assert torch.allclose(out, sigma)


def test_node_message_fixed_seed_repeats():
    mu, sigma = torch.zeros(5, dtype=torch.float64), torch.ones(5, dtype=torch.float64)
    a = sample_node_message(mu, sigma, generator=torch.Generator().manual_seed(9))
    b = sample_node_message(mu, sigma, generator=torch.Generator().manual_seed(9))
    assert torch.equal(a, b)


def test_node_message_moments():
    n = 100_000
    mu = torch.ones(n, 3, dtype=torch.float64)
    sigma = torch.ones(n, 3, dtype=torch.float64)
    x = sample_node_message(mu, sigma, generator=torch.Generator().manual_seed(4))
    mean_se = 1 / math.sqrt(n)
    var_se = math.sqrt(2 / n)
    assert torch.all((x.mean(0) - 1).abs() < 3 * mean_se)
    assert torch.all((x.var(0) - 1).abs() < 3 * var_se)


def test_eval_mode_message_is_mean():
    mu = torch.tensor([0.3, -1.0], dtype=torch.float64)
    assert torch.equal(sample_node_message(mu, torch.ones(2, dtype=torch.float64), eval_mode=True), mu)


# --- communicate ------------------------------------------------------------

def test_all_dead_agents_send_nothing():
    comm, _ = make_comm(n=3)
    emb = np.random.default_rng(0).normal(size=(3, 4))
    msgs, states, ledger = communicate(comm, emb, [False] * 3)
    assert np.all(msgs == 0)
    assert states[-1].sib_total == 0 and states[-1].xib_total == 0
    assert ledger.per_edge_kl == {}


def test_single_agent_has_no_edges():
    comm, _ = make_comm(n=1)
    emb = np.random.default_rng(0).normal(size=(1, 4))
    msgs, states, ledger = communicate(comm, emb, [True], eval_mode=True)
    assert states[0].sib_total == 0 and ledger.per_edge_kl == {}
    own = comm.layers[0].agg.own(torch.as_tensor(emb)).detach().numpy()
    assert np.allclose(msgs, own)


def test_three_agents_enumerate_six_edges_and_three_nodes():
    comm, cfg = make_comm(n=3)
    emb = np.random.default_rng(1).normal(size=(3, 4))
    noise = CommNoise.draw((), 1, 3, 2, torch.Generator().manual_seed(0), torch.float64)
    msgs, states, ledger = communicate(comm, emb, [True] * 3, noise)
    assert sorted(k[1:] for k in ledger.per_edge_kl) == [(j, k) for j in range(3) for k in range(3) if j != k]
    alpha = states[0].edge_probs
    expected_sib = sum(bernoulli_kl_by_enumeration(alpha[j, k]) for j in range(3) for k in range(3) if j != k)
    assert states[0].sib_total == pytest.approx(expected_sib, rel=1e-10)
    mu, sd = states[0].node_means, states[0].node_stds
    expected_xib = sum(0.5 * (mu[i, b] ** 2 + sd[i, b] ** 2 - math.log(sd[i, b] ** 2) - 1)
                       for i in range(3) for b in range(2))
    assert states[0].xib_total == pytest.approx(expected_xib, rel=1e-10)
    assert ledger.per_bit_kl.shape == (1, 3, 2)
    assert np.all(np.diag(states[0].edge_samples) == 0)


def test_zero_agents_rejected():
    comm, _ = make_comm(n=3)
    with pytest.raises(ValueError):
        communicate(comm, np.zeros((0, 4)), [])


def test_dead_agent_rows_and_columns_are_zero():
    comm, _ = make_comm(n=4)
    emb = np.random.default_rng(2).normal(size=(4, 4))
    msgs, states, _ = communicate(comm, emb, [True, False, True, True])
    s = states[0]
    assert np.all(s.edge_samples[1] == 0) and np.all(s.edge_samples[:, 1] == 0)
    assert np.all(s.node_messages[1] == 0) and np.all(msgs[1] == 0)


def test_ledger_sums_match_totals():
    comm, _ = make_comm(n=4, rounds=2)
    emb = np.random.default_rng(3).normal(size=(4, 4))
    _, states, ledger = communicate(comm, emb, [True] * 4)
    assert ledger.sib_total == pytest.approx(states[-1].sib_total, rel=1e-12)
    assert ledger.xib_total == pytest.approx(states[-1].xib_total, rel=1e-12)


def test_regularisers_vanish_only_at_prior():
    comm, _ = make_comm(n=3)
    layer = comm.layers[0]
    with torch.no_grad():
        layer.edge.out.weight.zero_()
        layer.edge.out.bias.zero_()
        layer.node.mu.weight.zero_()
        layer.node.mu.bias.zero_()
        layer.node.sigma.weight.zero_()
        layer.node.sigma.bias.fill_(SIGMA_UNIT_BIAS)
    emb = np.random.default_rng(4).normal(size=(3, 4))
    _, states, _ = communicate(comm, emb, [True] * 3)
    assert states[0].sib_total == pytest.approx(0, abs=1e-12)
    assert states[0].xib_total == pytest.approx(0, abs=1e-12)
    with torch.no_grad():
        layer.node.mu.bias.fill_(0.1)
    _, states, _ = communicate(comm, emb, [True] * 3)
    assert states[0].xib_total > 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**16), n=st.integers(1, 6), rounds=st.integers(1, 2),
       alive=st.lists(st.booleans(), min_size=6, max_size=6))
def test_regularisers_nonnegative(seed, n, rounds, alive):
    comm, _ = make_comm(n=n, rounds=rounds, seed=seed)
    emb = np.random.default_rng(seed).normal(size=(n, 4)) * 3
    _, states, _ = communicate(comm, emb, alive[:n])
    assert states[-1].sib_total >= 0 and states[-1].xib_total >= 0


def test_communicate_is_pure():
    comm, _ = make_comm(n=4, rounds=2)
    emb = np.random.default_rng(5).normal(size=(4, 4))
    noise = CommNoise.draw((), 2, 4, 2, torch.Generator().manual_seed(1), torch.float64)
    a = communicate(comm, emb, [True] * 4, noise)
    b = communicate(comm, emb, [True] * 4, noise)
    assert np.array_equal(a[0], b[0])
    assert a[2].per_edge_kl == b[2].per_edge_kl


def test_masked_sender_does_not_reach_excluded_receivers():
    comm, _ = make_comm(n=5, edge_init_bias=0.0)
    emb = torch.as_tensor(np.random.default_rng(6).normal(size=(5, 4)) * 3)
    alive = torch.ones(5, dtype=torch.bool)
    base = comm(emb, alive, eval_mode=True)
    edges = base.rounds[0].edges
    assert 0 < edges.sum() < 20, "fixture needs a partially pruned graph"
    checked = 0
    for sender in range(5):
        def zero_sender(sent, j=sender):
            sent = sent.clone()
            sent[j] = 0
            return sent
        out = comm(emb, alive, eval_mode=True, sent_override=zero_sender)
        for recv in range(5):
            if edges[sender, recv] == 0:
                assert torch.equal(out.messages[recv], base.messages[recv])
                checked += 1
    assert checked > 0


def test_round_two_structure_depends_only_on_round_one_messages():
    comm, _ = make_comm(n=4, rounds=2, seed=2)
    alive = torch.ones(4, dtype=torch.bool)
    emb = torch.as_tensor(np.random.default_rng(7).normal(size=(4, 4)))
    out = comm(emb, alive, eval_mode=True)
    m1 = out.rounds[0].aggregated
    alpha2 = comm.layers[1].edge_probs(m1)
    valid2 = out.rounds[1].valid
    assert torch.allclose(out.rounds[1].alpha, alpha2 * valid2)
    # changing the round-1 messages changes the round-2 probabilities
    assert not torch.allclose(comm.layers[1].edge_probs(m1 + 0.5), alpha2)
    # changing the round-0 input while holding round-1 messages fixed does not
    emb2 = emb + torch.randn(emb.shape, generator=torch.Generator().manual_seed(0), dtype=emb.dtype)
    out2 = comm(emb2, alive, eval_mode=True)
    assert not torch.allclose(out2.rounds[0].aggregated, m1)
    frozen = comm.layers[1](m1, valid2, alive, None, None, tau=1.0, eval_mode=True, formula="conventional")
    assert torch.equal(frozen.alpha, out.rounds[1].alpha)


def test_second_round_only_rescores_kept_edges():
    comm, _ = make_comm(n=5, rounds=2, seed=3)
    emb = torch.as_tensor(np.random.default_rng(8).normal(size=(5, 4)) * 3)
    out = comm(emb, torch.ones(5, dtype=torch.bool), eval_mode=True)
    kept1 = out.rounds[0].edges.bool()
    assert torch.equal(out.rounds[1].valid, kept1)
    assert torch.all(out.rounds[1].edges <= out.rounds[0].edges)


def test_full_mode_keeps_complete_graph_without_structure_cost():
    comm, _ = make_comm(n=4, mode="full")
    emb = np.random.default_rng(9).normal(size=(4, 4))
    _, states, _ = communicate(comm, emb, [True] * 4)
    assert states[0].sib_total == 0
    assert np.array_equal(states[0].edge_samples, 1 - np.eye(4))


def test_regulariser_gradients_pass_grad_check():
    comm, _ = make_comm(n=3, rounds=2)
    emb = torch.as_tensor(np.random.default_rng(10).normal(size=(2, 3, 4)))
    alive = torch.tensor([[True, True, True], [True, False, True]])
    noise = CommNoise.draw((2,), 2, 3, 2, torch.Generator().manual_seed(2), torch.float64)

    def loss():
        out = comm(emb, alive, noise)
        return (out.sib + out.xib).sum() + out.messages.pow(2).sum()

    report = grad_check(loss, dict(comm.named_parameters()), tolerance=1e-4)
    assert report.passed, report


# --- ranking ----------------------------------------------------------------

def test_rank_bits_tie_break_is_lexicographic():
    assert rank_bits(np.zeros((2, 3))) == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]


def test_rank_bits_puts_largest_last():
    kl = np.zeros((3, 2))
    kl[1, 0] = 5.0
    assert rank_bits(kl)[-1] == (1, 0)


@given(st.lists(st.floats(0, 3, allow_nan=False), min_size=12, max_size=12))
def test_rank_bits_agrees_with_reference_sort(values):
    kl = np.array(values).reshape(4, 3)
    reference = sorted(((i, b) for i in range(4) for b in range(3)), key=lambda p: (kl[p], p[0], p[1]))
    assert rank_bits(kl) == reference
    assert rank_bits(KLLedger({}, kl[None])) == reference
