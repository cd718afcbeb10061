"""Forecaster contracts: initialization, forward semantics, loss, gradients,
parameter bookkeeping, checkpoint round-trip."""

import numpy as np
import pytest
from scipy.special import expit

from metacast import autodiff as ad
from metacast.lstm import (ArchConfig, forward, forward_batch, init_params,
                           load_params, mse_loss, params_from_dict, params_to_dict,
                           save_params)

TINY = ArchConfig(hidden_size=4, input_len=8, output_len=2)


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom)


def test_init_shapes_default_arch():
    cfg = ArchConfig(hidden_size=32, input_len=672, output_len=96)
    ps = init_params(cfg, seed=7)
    shapes = [t.data.shape for t in ps.tensors()]
    assert shapes == [(128, 1), (128, 32), (128,), (96, 32), (96,)]


def test_init_deterministic_and_bounded():
    cfg = ArchConfig(hidden_size=16, input_len=10, output_len=3)
    a = init_params(cfg, seed=3)
    b = init_params(cfg, seed=3)
    for ta, tb in zip(a.tensors(), b.tensors()):
        assert np.array_equal(ta.data, tb.data)
    bound = 1 / np.sqrt(16)
    for layer, name, t in a.entries():
        if name.startswith("b"):
            assert np.all(t.data == 0.0)
        else:
            assert np.all(np.abs(t.data) <= bound)


def test_param_count_formula_matches_enumeration():
    for layers in (1, 2, 3):
        cfg = ArchConfig(hidden_size=8, input_len=12, output_len=5, num_linear_layers=layers)
        h, t_o = 8, 5
        formula = 4 * h * (1 + h + 1) + (t_o * h + t_o) + (layers - 1) * (t_o**2 + t_o)
        enumerated = sum(t.data.size for t in init_params(cfg, 0).tensors())
        assert cfg.param_count() == formula == enumerated


def test_zero_params_give_zero_forecast():
    ps = init_params(TINY, 0).with_arrays([np.zeros_like(t.data) for t in init_params(TINY, 0).tensors()])
    out = forward(ps, np.random.default_rng(0).uniform(size=8), TINY)
    assert np.array_equal(out.data, np.zeros(2))


def test_forward_is_pure():
    ps = init_params(TINY, 1)
    x = np.random.default_rng(1).uniform(size=8)
    a = forward(ps, x, TINY).data
    b = forward(ps, x, TINY).data
    assert np.array_equal(a, b)


def test_forward_order_sensitivity():
    ps = init_params(TINY, 2)
    rng = np.random.default_rng(2)
    x = rng.uniform(0.2, 1.0, size=8)
    out_fwd = forward(ps, x, TINY).data
    out_rev = forward(ps, x[::-1], TINY).data
    assert not np.allclose(out_fwd, out_rev)


def test_two_step_lstm_matches_hand_recurrence():
    # H=1, T_I=2: hand-set parameters, independent numpy recurrence as oracle.
    cfg = ArchConfig(hidden_size=1, input_len=2, output_len=1)
    w_ih = np.array([[0.3], [-0.2], [0.5], [0.4]])   # rows: i, f, g, o
    w_hh = np.array([[0.1], [0.2], [-0.3], [0.25]])
    b = np.array([0.05, -0.1, 0.2, 0.0])
    head_w = np.array([[1.5]])
    head_b = np.array([-0.25])
    base = init_params(cfg, 0)
    ps = base.with_arrays([w_ih, w_hh, b, head_w, head_b])
    x = np.array([0.7, -0.4])

    h = c = 0.0
    for xv in x:
        z = w_ih[:, 0] * xv + w_hh[:, 0] * h + b
        gi, gf, gg, go = expit(z[0]), expit(z[1]), np.tanh(z[2]), expit(z[3])
        c = gf * c + gi * gg
        h = go * np.tanh(c)
    want = head_w[0, 0] * h + head_b[0]

    got = forward(ps, x, cfg).data[0]
    assert abs(got - want) < 1e-12


def test_batch_forward_matches_single():
    ps = init_params(TINY, 5)
    rng = np.random.default_rng(5)
    xs = rng.uniform(size=(3, 8))
    batch = forward_batch(ps, xs, TINY).data
    for j in range(3):
        single = forward(ps, xs[j], TINY).data
        assert np.allclose(batch[:, j], single, atol=1e-14)


def test_mse_loss_examples():
    ps_zero = init_params(TINY, 0).with_arrays(
        [np.zeros_like(t.data) for t in init_params(TINY, 0).tensors()])
    x = np.ones(8)
    # zero net forecasts zero; target zero -> loss 0
    assert mse_loss(ps_zero, [(x, np.zeros(2))], TINY).item() == 0.0
    # forecast = target + 1 everywhere -> 1
    assert abs(mse_loss(ps_zero, [(x, np.ones(2))], TINY).item() - 1.0) < 1e-15
    # single sample, T_O=2, errors (1, -3) -> (1+9)/2 = 5
    assert abs(mse_loss(ps_zero, [(x, np.array([-1.0, 3.0]))], TINY).item() - 5.0) < 1e-15


def test_mse_loss_empty_batch_rejected():
    with pytest.raises(ValueError, match="empty"):
        mse_loss(init_params(TINY, 0), [], TINY)


def test_loss_gradient_matches_finite_differences():
    # The forecaster's full gradient against the central-difference oracle.
    ps = init_params(TINY, 9)
    rng = np.random.default_rng(9)
    batch = [(rng.uniform(0.1, 1.0, 8), rng.uniform(0.1, 1.0, 2)) for _ in range(3)]

    def f(params):
        with ad.Graph():
            return mse_loss(params, batch, TINY)

    want = [t.data for t in ad.finite_diff_gradient(f, ps, h=1e-5).tensors()]
    with ad.Graph():
        loss = mse_loss(ps, batch, TINY)
        got = ad.grad(loss, ps.tensors())
    for g, w in zip(got, want):
        assert rel_err(g.data, w) < 1e-4


def test_checkpoint_roundtrip(tmp_path):
    cfg = ArchConfig(hidden_size=3, input_len=6, output_len=2, num_linear_layers=2)
    ps = init_params(cfg, 4)
    path = tmp_path / "ckpt.json"
    save_params(path, ps, cfg, extra={"learned_rates": [[0.01], [0.02], [0.03]]})
    loaded, cfg2, extra = load_params(path)
    assert cfg2 == cfg
    assert extra["learned_rates"] == [[0.01], [0.02], [0.03]]
    for a, b in zip(ps.tensors(), loaded.tensors()):
        assert np.array_equal(a.data, b.data)


def test_checkpoint_rejects_mismatched_shapes():
    cfg = ArchConfig(hidden_size=3, input_len=6, output_len=2)
    doc = params_to_dict(init_params(cfg, 0), cfg)
    doc["arch_config"]["hidden_size"] = 4
    with pytest.raises(ValueError, match="arch_config"):
        params_from_dict(doc)


def test_paramset_congruence_and_lookup():
    a, b = init_params(TINY, 0), init_params(TINY, 1)
    assert a.congruent_with(b)
    assert a.get("lstm", "W_hh").data.shape == (16, 4)
    with pytest.raises(KeyError):
        a.get("lstm", "nope")
