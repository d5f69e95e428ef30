import logging

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import polysls.alphanet as alphanet
from polysls.alphanet import (AlphaNet, TrainConfig, alphas_for_time, grad_check, layer_dims_for, net_forward,
                              net_init, rollout_loss, saturated_net, train)
from polysls.harness import SlsPolicy, simulate
from polysls.poly import poly_eval
from polysls.synth import synthesize
from polysls.systems import cubic2, polynomial_plant, scalar_quadratic


@pytest.fixture(scope="module")
def quad_setup():
    dyn = scalar_quadratic(0.5)
    return dyn, synthesize(dyn, 2), polynomial_plant(dyn)


@pytest.fixture(scope="module")
def cubic_setup():
    return cubic2(), synthesize(cubic2(), 2), polynomial_plant(cubic2())


# --- construction ------------------------------------------------------------------


def test_net_init_reproducible(cubic_setup):
    _, ctl, _ = cubic_setup
    dims = layer_dims_for(ctl, (32, 32))
    a, b, c = net_init(dims, 5), net_init(dims, 5), net_init(dims, 6)
    assert torch.equal(a.flat_parameters(), b.flat_parameters())
    assert not torch.equal(a.flat_parameters(), c.flat_parameters())
    assert a.layer_dims[0] == ctl.n * ctl.T and a.layer_dims[-1] == ctl.n_gated


def test_fan_in_bounds():
    net = net_init([4, 100, 3], 0)
    for lin in net.linears:
        assert lin.weight.abs().max() <= 1 / np.sqrt(lin.in_features)


def test_invalid_dims():
    with pytest.raises(ValueError):
        AlphaNet([4, 0, 3])
    with pytest.raises(ValueError):
        AlphaNet([4])
    with pytest.raises(ValueError):
        AlphaNet([4, 3], alpha_min=1.0)


def test_json_round_trip(tmp_path):
    net = net_init([4, 8, 3], 1, alpha_min=0.3, dropout_rate=0.2)
    net.save(tmp_path / "n.json")
    back = AlphaNet.load(tmp_path / "n.json")
    assert back.layer_dims == [4, 8, 3] and back.alpha_min == 0.3 and back.dropout_rate == 0.2
    assert torch.equal(back.flat_parameters(), net.flat_parameters())


# --- forward -----------------------------------------------------------------------


def test_zero_weights_give_midpoint():
    net = AlphaNet([4, 8, 3], alpha_min=0.4)
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    out = net_forward(net, np.random.default_rng(0).normal(size=(5, 4)))
    assert np.allclose(out, (0.4 + 1) / 2, atol=0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4), st.integers(0, 100))
def test_outputs_inside_open_range(window, seed):
    net = net_init([4, 16, 16, 5], seed, alpha_min=0.5)
    out = net_forward(net, window)
    assert np.all(out > 0.5) and np.all(out < 1.0)


def test_eval_mode_deterministic_and_dropout_in_train_mode():
    net = net_init([4, 64, 64, 5], 0, dropout_rate=0.5)
    x = np.random.default_rng(1).normal(size=(3, 4))
    assert np.array_equal(net_forward(net, x), net_forward(net, x))
    torch.manual_seed(0)
    t1, t2 = net_forward(net, x, train_mode=True), net_forward(net, x, train_mode=True)
    assert not np.array_equal(t1, t2)


def test_non_finite_window():
    with pytest.raises(ValueError):
        net_forward(net_init([2, 3], 0), [np.nan, 0.0])


def test_saturated_net_reproduces_unit_gains():
    net = saturated_net([4, 8, 3])
    out = net_forward(net, np.random.default_rng(2).normal(size=(6, 4)))
    assert np.max(np.abs(out - 1.0)) <= 1e-12
    assert np.all(out < 1.0)


# --- causality ---------------------------------------------------------------------


def test_newest_disturbance_is_ignored(cubic_setup):
    _, ctl, _ = cubic_setup
    net = net_init(layer_dims_for(ctl, (16,)), 0)
    hist = np.random.default_rng(3).normal(size=(ctl.T + 1, 2))
    a = alphas_for_time(net, hist, ctl)
    hist[0] += 10.0
    assert alphas_for_time(net, hist, ctl) == a


def test_cold_start_constant(cubic_setup):
    _, ctl, _ = cubic_setup
    net = net_init(layer_dims_for(ctl, (16,)), 0)
    a = alphas_for_time(net, [], ctl)
    expected = net_forward(net, np.zeros(ctl.n * ctl.T))
    assert np.allclose([a[i] for i in range(ctl.n_gated)], expected, rtol=0, atol=0)


def test_level_masks(cubic_setup):
    _, ctl, _ = cubic_setup
    net = net_init(layer_dims_for(ctl, (16,)), 0)
    hist = np.random.default_rng(4).normal(size=(ctl.T + 1, 2))
    base = alphas_for_time(net, hist, ctl)
    older = hist.copy()
    older[2] += 1.0  # w_{t-2}: outside the level-0 window
    moved = alphas_for_time(net, older, ctl)
    levels = ctl.term_levels
    for i in range(ctl.n_gated):
        if levels[i] == 0:
            assert moved[i] == base[i]
    assert any(moved[i] != base[i] for i in range(ctl.n_gated) if levels[i] == 1)


def test_rollout_gains_in_range(cubic_setup):
    _, ctl, plant = cubic_setup
    net = net_init(layer_dims_for(ctl, (16, 16)), 1, alpha_min=0.6)
    d = np.random.default_rng(5).uniform(-1, 1, size=(50, 2))
    res = simulate(plant, SlsPolicy(ctl, net.eval()), d)
    assert np.all(res.alphas > 0.6) and np.all(res.alphas < 1.0)


# --- loss --------------------------------------------------------------------------


def test_zero_disturbance_loss(cubic_setup):
    _, ctl, plant = cubic_setup
    net = net_init(layer_dims_for(ctl, (8,)), 0)
    assert float(rollout_loss(net, ctl, plant, np.zeros((1, 20, 2))).detach()) == 0.0


def test_unit_gain_impulse_loss_is_one_cancellation(quad_setup):
    dyn, ctl, plant = quad_setup
    net = saturated_net(layer_dims_for(ctl, (8,)))
    d = np.zeros((1, 10, 1))
    d[0, 0, 0] = 0.8
    loss = float(rollout_loss(net, ctl, plant, d, Q=np.zeros((1, 1)), R=np.eye(1)).detach())
    u1 = -poly_eval(dyn, [0.8])
    assert loss == pytest.approx(float(u1 @ u1), rel=1e-10)


def test_loss_ignores_later_disturbances(cubic_setup):
    _, ctl, plant = cubic_setup
    net = net_init(layer_dims_for(ctl, (8,)), 0)
    d = np.random.default_rng(6).uniform(-1, 1, size=(1, 30, 2))
    short = float(rollout_loss(net, ctl, plant, d[:, :20]).detach())
    d2 = d.copy()
    d2[:, 20:] = 5.0
    long = simulate(plant, SlsPolicy(ctl, net.eval()), d2[0])
    assert short == pytest.approx(long.step_costs[:20].sum(), rel=1e-12)


# --- training ----------------------------------------------------------------------


def test_smoke_training_decreases_loss(quad_setup):
    _, ctl, plant = quad_setup
    net = net_init(layer_dims_for(ctl, (16, 16)), 0)
    cfg = TrainConfig(N_T=20, epochs=200, learning_rate=0.5, batch=4, W=1.0, seed=0, momentum=0.9)
    _, trace = train(net, ctl, plant, cfg)
    assert len(trace) == 200 and np.all(np.isfinite(trace))
    assert trace[-1] <= trace[0]


def test_zero_learning_rate_keeps_weights(quad_setup):
    _, ctl, plant = quad_setup
    net = net_init(layer_dims_for(ctl, (8,)), 0)
    before = net.flat_parameters().clone()
    train(net, ctl, plant, TrainConfig(N_T=10, epochs=3, learning_rate=0.0, batch=2))
    assert torch.equal(before, net.flat_parameters())


def test_training_reproducible(quad_setup):
    _, ctl, plant = quad_setup
    cfg = TrainConfig(N_T=10, epochs=5, learning_rate=0.3, batch=2, seed=4)
    runs = [train(net_init(layer_dims_for(ctl, (8,)), 0), ctl, plant, cfg) for _ in range(2)]
    assert np.array_equal(runs[0][1], runs[1][1])
    assert torch.equal(runs[0][0].flat_parameters(), runs[1][0].flat_parameters())


def test_train_config_validation(quad_setup):
    _, ctl, plant = quad_setup
    net = net_init(layer_dims_for(ctl, (8,)), 0)
    with pytest.raises(ValueError):
        train(net, ctl, plant, TrainConfig(N_T=ctl.T))
    with pytest.raises(ValueError):
        train(net, ctl, plant, TrainConfig(N_T=10, R=[[0.0]]))


def test_non_finite_gradient_step_skipped(quad_setup, monkeypatch, caplog):
    _, ctl, plant = quad_setup
    net = net_init(layer_dims_for(ctl, (8,)), 0)
    before = net.flat_parameters().clone()

    def poisoned(net, *args, **kwargs):
        return sum(p.sum() for p in net.parameters()) * torch.tensor(float("nan"), dtype=torch.float64)

    monkeypatch.setattr(alphanet, "rollout_loss", poisoned)
    with caplog.at_level(logging.WARNING, logger="polysls.alphanet"):
        train(net, ctl, plant, TrainConfig(N_T=10, epochs=2, learning_rate=1.0, batch=2))
    assert torch.equal(before, net.flat_parameters())
    assert "non-finite gradient" in caplog.text


# --- gradient check ----------------------------------------------------------------


def _closure(net, ctl, plant, seed, n):
    d = np.random.default_rng(seed).uniform(-0.7, 0.7, size=(2, 12, n))
    return lambda: rollout_loss(net, ctl, plant, d, train_mode=False)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_check_agrees(cubic_setup, seed):
    _, ctl, plant = cubic_setup
    net = net_init(layer_dims_for(ctl, (16, 16)), seed)
    rep = grad_check(net, _closure(net, ctl, plant, seed, 2), eps=1e-6)
    assert rep.max_rel_err < 1e-4
    assert len(rep.coords) == 100 and np.all(np.isfinite(rep.fd_grad))


def test_grad_check_zero_case(cubic_setup):
    _, ctl, plant = cubic_setup
    net = AlphaNet(layer_dims_for(ctl, (8,)))
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    d = np.zeros((1, 10, 2))
    rep = grad_check(net, lambda: rollout_loss(net, ctl, plant, d), eps=1e-5)
    assert np.all(rep.analytic_grad == 0) and np.all(rep.fd_grad == 0)


def test_grad_check_error_follows_truncation_then_round_off(quad_setup):
    # no hidden layer, so the loss is smooth in the weights and no ReLU kink sits inside the stencil
    _, ctl, plant = quad_setup
    net = net_init([ctl.n * ctl.T, ctl.n_gated], 3)
    clo = _closure(net, ctl, plant, 1, 1)
    errs = {e: grad_check(net, clo, eps=e, n_coords=40, seed=1).max_rel_err for e in (1e-3, 1e-4, 1e-5, 1e-7)}
    assert errs[1e-3] > errs[1e-4]
    assert errs[1e-7] > errs[1e-5]


def test_grad_check_eps_range(quad_setup):
    _, ctl, plant = quad_setup
    net = net_init(layer_dims_for(ctl, (8,)), 0)
    with pytest.raises(ValueError):
        grad_check(net, _closure(net, ctl, plant, 0, 1), eps=1e-2)
