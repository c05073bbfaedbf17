import math

import numpy as np
import pytest

from asrnn import graph as G
from asrnn.cells import (CellConfigError, Model, ScaleMode, count_params, init_params,
                         matched_hidden_size, run_sequence)
from asrnn.rng import RngStream
from asrnn.scaleconv import make_haar_bank

from helpers import central_difference, max_relative_error


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def reference_scaled(X, t, j, taps):
    acc = np.zeros(X.shape[1])
    for k, tap in enumerate(taps):
        if t - (2 ** j) * k >= 0:
            acc = acc + X[t - (2 ** j) * k] * tap
    return acc


def reference_unroll(cell, p, X, mode, taps, J, noise, tau):
    """Straight-line re-implementation of the gate equations for one sequence."""
    m = p["W_g"].shape[0]
    h, c = np.zeros(m), np.zeros(m)
    hs = []
    for t in range(len(X)):
        if mode.kind == "vanilla":
            xt = X[t]
        elif mode.kind == "fixed":
            xt = reference_scaled(X, t, mode.scale, taps)
        else:
            z = p["W_scale"] @ h + p["U_scale"] @ X[t] + p["b_scale"]
            logp = z - np.log(np.sum(np.exp(z)))
            a = (logp + noise[t]) / tau
            y = np.exp(a - a.max()) / np.exp(a - a.max()).sum()
            xt = sum(y[j] * reference_scaled(X, t, j, taps) for j in range(J))
        if cell == "lstm":
            f = sig(p["W_f"] @ h + p["U_f"] @ xt + p["b_f"])
            i = sig(p["W_i"] @ h + p["U_i"] @ xt + p["b_i"])
            o = sig(p["W_o"] @ h + p["U_o"] @ xt + p["b_o"])
            g = np.tanh(p["W_g"] @ h + p["U_g"] @ xt + p["b_g"])
            c = f * c + i * g
            h = o * np.tanh(c)
        else:
            zg = sig(p["W_z"] @ h + p["U_z"] @ xt + p["b_z"])
            r = sig(p["W_r"] @ h + p["U_r"] @ xt + p["b_r"])
            g = np.tanh(p["W_g"] @ (r * h) + p["U_g"] @ xt + p["b_g"])
            h = zg * h + (1 - zg) * g
        hs.append(h)
    return np.array(hs)


def random_model(cell, mode, m=4, n=2, J=2, K=2, classes=3, seed=0, bias_scale=0.5):
    rng = RngStream(seed)
    model = Model.create(cell, m, n, classes, mode, num_scales=J, kernel_size=K, rng=rng)
    for p in model.parameters():
        if p.value.ndim == 1:
            p.value[:] = rng.uniform(p.value.shape, -bias_scale, bias_scale)
    return model, rng


MODES = [ScaleMode.adaptive(), ScaleMode.fixed(1), ScaleMode.vanilla()]


@pytest.mark.parametrize("cell", ["lstm", "gru"])
@pytest.mark.parametrize("mode", MODES, ids=str)
def test_unroll_matches_reference(cell, mode):
    model, rng = random_model(cell, mode, m=5, n=3, J=3, K=4)
    X = rng.uniform((12, 3), -2, 2)
    noise = rng.gumbel((12, 1, 3))
    p = model.numpy_params()
    want = reference_unroll(cell, p, X, mode, model.bank.taps, model.num_scales,
                            noise[:, 0], model.tau)
    logits_want = want @ p["W_out"].T + p["b_out"]
    target = rng.integers(0, 2, 12)
    _, traces, outputs = run_sequence(model, X[None], target[None], noise=noise)
    np.testing.assert_allclose(outputs[0], logits_want, rtol=1e-10, atol=1e-12)
    assert len(traces) == 12


def test_vanilla_zero_params_fixed_point():
    model = Model.create("lstm", 3, 2, 2, ScaleMode.vanilla(), rng=RngStream(0))
    for p in model.parameters():
        p.value[:] = 0.0
    X = RngStream(1).uniform((5, 2))
    model.params["W_out"].value[:] = np.eye(2, 3)
    _, _, out = run_sequence(model, X, np.zeros(5, dtype=int))
    np.testing.assert_array_equal(out, 0.0)


def test_gru_zero_params_stays_zero():
    model = Model.create("gru", 3, 2, 3, ScaleMode.adaptive(), num_scales=2,
                         kernel_size=2, rng=RngStream(0))
    for p in model.parameters():
        p.value[:] = 0.0
    X = RngStream(1).uniform((6, 2))
    noise = RngStream(2).gumbel((6, 1, 2))
    loss, _, out = run_sequence(model, X, 0, noise=noise)
    np.testing.assert_array_equal(out, 0.0)
    # zero head gives uniform logits over 3 classes
    assert loss.value == pytest.approx(math.log(3), abs=1e-15)


def test_gru_saturated_update_gate_copies_state():
    model, rng = random_model("gru", ScaleMode.vanilla(), m=4, n=2)
    model.params["b_z"].value[:] = 50.0
    X = rng.uniform((6, 2), -1, 1)
    # run with a nonzero initial state by feeding a first step without saturation
    p = model.numpy_params()
    h0 = rng.uniform(4, -0.9, 0.9)
    zg = sig(p["W_z"] @ h0 + p["U_z"] @ X[0] + p["b_z"])
    r = sig(p["W_r"] @ h0 + p["U_r"] @ X[0] + p["b_r"])
    g = np.tanh(p["W_g"] @ (r * h0) + p["U_g"] @ X[0] + p["b_g"])
    h1 = zg * h0 + (1 - zg) * g
    assert np.max(np.abs(h1 - h0)) < 1e-6

    from asrnn.cells import CellState, _Prepared, step_asgru
    state = CellState(G.constant(h0[None]))
    new, _ = step_asgru(model, _Prepared(model), G.constant(X[:1]), None, state)
    assert np.max(np.abs(new.h.value[0] - h0)) < 1e-6


def test_run_sequence_single_step_hand_computation():
    model = Model.create("gru", 1, 1, 2, ScaleMode.vanilla(), rng=RngStream(0))
    vals = {"W_z": 0.3, "W_r": -0.2, "W_g": 0.5, "U_z": 0.7, "U_r": 0.1, "U_g": -1.1,
            "b_z": 0.05, "b_r": 0.0, "b_g": 0.2}
    for k, v in vals.items():
        model.params[k].value[...] = v
    model.params["W_out"].value[:] = [[1.0], [-1.0]]
    model.params["b_out"].value[:] = [0.1, 0.0]
    x = 0.8
    # h0 = 0 so r and W_g drop out: z = sig(0.7*0.8+0.05), g = tanh(-1.1*0.8+0.2)
    zg = 1 / (1 + math.exp(-(0.7 * x + 0.05)))
    g = math.tanh(-1.1 * x + 0.2)
    h = (1 - zg) * g
    l0, l1 = h + 0.1, -h
    want = -(l1 - math.log(math.exp(l0) + math.exp(l1)))
    loss, _, _ = run_sequence(model, np.array([[x]]), 1)
    assert loss.value == pytest.approx(want, rel=1e-14)


def test_masked_loss_zero_when_mask_empty():
    model, rng = random_model("lstm", ScaleMode.adaptive(), classes=4)
    X = rng.uniform((2, 7, 2))
    target = rng.integers(0, 3, (2, 7))
    loss, _, _ = run_sequence(model, X, target, np.zeros((2, 7)), rng=rng)
    assert loss.value == 0.0


def test_uniform_head_sequence_label_loss():
    model, rng = random_model("gru", ScaleMode.fixed(0), classes=3)
    model.params["W_out"].value[:] = 0.0
    model.params["b_out"].value[:] = 0.0
    loss, _, _ = run_sequence(model, rng.uniform((4, 9, 2)), [0, 1, 2, 0])
    assert loss.value == pytest.approx(math.log(3), abs=1e-15)


def test_empty_sequence_rejected():
    model, _ = random_model("gru", ScaleMode.vanilla())
    with pytest.raises(G.GraphUsageError):
        run_sequence(model, np.zeros((1, 0, 2)), [0])


def test_fixed_scale_must_exist():
    with pytest.raises(CellConfigError):
        Model.create("gru", 4, 2, 3, ScaleMode.fixed(4), num_scales=4, rng=RngStream(0))


def test_init_params_glorot_bounds_and_zero_biases():
    p = init_params(1, 1, 1, "lstm", RngStream(0), classes=1)
    assert abs(p["W_f"][0, 0]) <= math.sqrt(3)
    for name, v in p.items():
        if name.startswith("b_"):
            assert np.all(v == 0.0)


def test_init_params_variance():
    p = init_params(64, 64, 1, "gru", RngStream(5), classes=1)
    draws = np.concatenate([p[k].ravel() for k in ("W_z", "W_r", "W_g", "U_z", "U_r", "U_g")])
    draws = draws[:10 ** 5] if draws.size > 10 ** 5 else draws
    assert abs(draws.var() / (2 / 128) - 1) < 0.05


def test_matched_hidden_size_is_close():
    m = matched_hidden_size("gru", 64, 1, 3, 4)
    adaptive = count_params("gru", 64, 1, 3, 4, True)
    assert abs(count_params("gru", m, 1, 3, 4, False) - adaptive) <= abs(
        count_params("gru", 64, 1, 3, 4, False) - adaptive)


def _loss_fn(model, X, target, mask, noise):
    def f():
        return float(run_sequence(model, X, target, mask, noise=noise)[0].value)
    return f


@pytest.mark.parametrize("cell", ["lstm", "gru"])
@pytest.mark.parametrize("mode", MODES, ids=str)
@pytest.mark.parametrize("per_step", [False, True])
def test_full_sequence_gradient_check(cell, mode, per_step):
    model, rng = random_model(cell, mode, m=4, n=2, J=2, K=2, seed=3)
    X = rng.uniform((2, 8, 2), -1, 1)
    noise = rng.gumbel((8, 2, 2))
    if per_step:
        target = rng.integers(0, 2, (2, 8))
        mask = (rng.uniform((2, 8)) > 0.3).astype(float)
    else:
        target, mask = rng.integers(0, 2, 2), None
    loss, _, _ = run_sequence(model, X, target, mask, noise=noise)
    model.zero_grad()
    G.backward(loss)
    f = _loss_fn(model, X, target, mask, noise)
    for name, p in model.params.items():
        numeric = central_difference(f, p.value)
        assert max_relative_error(p.grad, numeric) < 1e-4, name


@pytest.mark.parametrize("cell", ["lstm", "gru"])
def test_degenerate_scales_match_vanilla_exactly(cell):
    rng = RngStream(17)
    vanilla = Model.create(cell, 5, 3, 4, ScaleMode.vanilla(), rng=rng)
    adaptive = Model.create(cell, 5, 3, 4, ScaleMode.adaptive(), num_scales=1,
                            kernel_size=1, rng=rng)
    for name, p in vanilla.params.items():
        adaptive.params[name].value[...] = p.value
    X = rng.uniform((3, 10, 3), -2, 2)
    target = rng.integers(0, 3, 3)
    lv, _, _ = run_sequence(vanilla, X, target)
    la, traces, _ = run_sequence(adaptive, X, target, rng=rng)
    assert lv.value.tobytes() == la.value.tobytes()
    G.backward(lv)
    G.backward(la)
    for name, p in vanilla.params.items():
        assert p.grad.tobytes() == adaptive.params[name].grad.tobytes(), name
    assert all(np.all(tr.hard == 0) for tr in traces)


@pytest.mark.parametrize("cell", ["lstm", "gru"])
def test_fixed_mode_equals_forced_one_hot(cell):
    rng = RngStream(23)
    adaptive = Model.create(cell, 4, 2, 3, ScaleMode.adaptive(), rng=rng)
    fixed = Model.create(cell, 4, 2, 3, ScaleMode.fixed(3), rng=rng)
    for name, p in fixed.params.items():
        p.value[...] = adaptive.params[name].value
    X = rng.uniform((2, 30, 2), -1, 1)
    lf, tf, of = run_sequence(fixed, X, [0, 2])
    la, ta, oa = run_sequence(adaptive, X, [0, 2], override=3)
    assert lf.value.tobytes() == la.value.tobytes()
    assert of.tobytes() == oa.tobytes()
    assert all(np.all(tr.hard == 3) for tr in tf + ta)


def test_lstm_state_bounds():
    model, rng = random_model("lstm", ScaleMode.adaptive(), m=6, n=2, J=4, K=8,
                              bias_scale=3.0)
    for p in model.parameters():
        p.value *= 3.0
    X = rng.uniform((1, 40, 2), -7, 7)
    from asrnn.cells import _Prepared, initial_state, step_aslstm
    from asrnn.scaleconv import scaled_sequence
    S = scaled_sequence(X, model.bank)
    noise = rng.gumbel((40, 1, 4))
    prep, state = _Prepared(model), initial_state(model, 1)
    for t in range(40):
        state, _ = step_aslstm(model, prep, G.constant(X[:, t]), S[:, t], state, noise[t])
        assert np.all(np.abs(state.h.value) < 1)
        assert np.all(np.abs(state.c.value) <= t + 1)


def test_traces_are_complete():
    model, rng = random_model("gru", ScaleMode.adaptive(), J=4, K=8, m=6)
    _, traces, _ = run_sequence(model, rng.uniform((3, 25, 2)), [0, 1, 2], rng=rng)
    assert [tr.t for tr in traces] == list(range(25))
    for tr in traces:
        assert tr.hard.shape == (3,)
        assert np.all((0 <= tr.hard) & (tr.hard < 4))
        np.testing.assert_allclose(tr.y.sum(axis=1), 1.0, atol=1e-12)


def test_straight_through_forward_is_one_hot():
    model, rng = random_model("gru", ScaleMode.adaptive(), J=3, K=2)
    model.hard_forward = True
    _, traces, _ = run_sequence(model, rng.uniform((2, 6, 2)), [0, 1], rng=rng)
    for tr in traces:
        assert set(np.unique(tr.y)) <= {0.0, 1.0}
