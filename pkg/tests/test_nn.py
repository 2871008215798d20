import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from flexsac.nn import (LOG_STD_MAX, LOG_STD_MIN, AdamState, CheckpointError, Mlp, NonFiniteError,
                        ShapeError, StateError, adam_step, load_mlp, sample_squashed_gaussian,
                        save_mlp, squash, squashed_log_density)

from oracles import fd_gradient_error, random_probe


def test_param_count():
    net = Mlp((24, 64, 64, 2), np.random.default_rng(0))
    assert net.n_params == 25 * 64 + 65 * 64 + 65 * 2


def test_zero_net_zero_output():
    net = Mlp((3, 5, 2))
    np.testing.assert_array_equal(net.forward(np.ones(3)), np.zeros(2))


def test_affine_by_hand():
    net = Mlp((2, 2))
    w, b = net.layers[0]
    w[...] = [[1.0, 2.0], [3.0, 4.0]]
    b[...] = [0.5, -0.5]
    np.testing.assert_allclose(net.forward(np.array([1.0, -1.0])), [1 - 3 + 0.5, 2 - 4 - 0.5])


def test_quadratic_loss_gradient_closed_form():
    rng = np.random.default_rng(3)
    net = Mlp((2, 2), rng)
    x, y = np.array([0.3, -1.2]), np.array([1.0, 2.0])
    out = net.forward(x)
    grad, _ = net.backward(2.0 * (out - y))
    w, b = net.layers[0]
    expected_w = np.outer(x, 2.0 * (x @ w + b - y))
    np.testing.assert_allclose(grad[:4].reshape(2, 2), expected_w, rtol=1e-12)
    np.testing.assert_allclose(grad[4:], 2.0 * (x @ w + b - y), rtol=1e-12)


def test_zero_loss_gradient():
    net = Mlp((4, 8, 3), np.random.default_rng(1))
    net.forward(np.ones((2, 4)))
    grad, gx = net.backward(np.zeros((2, 3)))
    assert not grad.any() and not gx.any()


@pytest.mark.parametrize("seed", range(10))
def test_finite_difference_gradients(seed):
    net, x, g = random_probe(np.random.default_rng(1000 + seed), max_width=16)
    assert fd_gradient_error(net, x, g) < 1e-4


def test_forward_rejects_bad_input():
    net = Mlp((3, 2), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        net.forward(np.array([1.0, np.nan, 0.0]))
    with pytest.raises(ShapeError):
        net.forward(np.ones(4))


def test_backward_without_forward():
    with pytest.raises(StateError):
        Mlp((2, 2)).backward(np.ones(2))


def test_forward_backward_bit_identical():
    net = Mlp((5, 7, 3), np.random.default_rng(2))
    x, g = np.random.default_rng(3).normal(size=(4, 5)), np.ones((4, 3))
    net.forward(x)
    a = net.backward(g)[0]
    net.forward(x)
    assert np.array_equal(a, net.backward(g)[0])


def test_adam_zero_gradient_unchanged():
    p = np.array([1.0, -2.0])
    st_ = AdamState.zeros_like(p)
    adam_step(p, np.zeros(2), st_, 1e-3)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_first_step_is_lr_sign():
    p = np.array([0.0, 0.0])
    adam_step(p, np.array([3.0, -0.02]), AdamState.zeros_like(p), 1e-3)
    np.testing.assert_allclose(p, [-1e-3, 1e-3], rtol=1e-5)


def test_adam_constant_gradient_scalar_oracle():
    p = np.array([0.0])
    s = AdamState.zeros_like(p)
    m = v = 0.0
    ref = 0.0
    for t in range(1, 501):
        adam_step(p, np.array([0.7]), s, 1e-2)
        m = 0.9 * m + 0.1 * 0.7
        v = 0.999 * v + 0.001 * 0.49
        ref -= 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert p[0] == pytest.approx(ref, rel=1e-12)
    before = p.copy()
    adam_step(p, np.array([0.7]), s, 1e-2)
    assert before[0] - p[0] == pytest.approx(1e-2, rel=1e-6)


def test_adam_rejects_nonfinite():
    p = np.array([1.0])
    s = AdamState.zeros_like(p)
    with pytest.raises(NonFiniteError):
        adam_step(p, np.array([np.inf]), s, 1e-3)
    assert p[0] == 1.0 and s.t == 0


def test_squash_midpoint_deterministic():
    out = sample_squashed_gaussian(np.array([0.0]), np.array([0.0]), deterministic=True)
    assert out.sampled_action[0] == 0.5
    assert squash(0.0) == 0.5


def test_degenerate_variance_limit():
    out = sample_squashed_gaussian(np.array([0.3]), np.array([-50.0]), np.random.default_rng(0))
    assert out.log_std[0] == LOG_STD_MIN
    assert out.sampled_action[0] == pytest.approx(squash(0.3), abs=1e-8)
    assert out.log_prob[0] > 15


@pytest.mark.parametrize("mean, log_std", [(0.0, 0.0), (1.2, -1.0), (-0.7, 0.5), (2.0, -2.5)])
def test_density_integrates_to_one(mean, log_std):
    total, _ = integrate.quad(lambda a: np.exp(squashed_log_density(a, mean, log_std)),
                              0.0, 1.0, limit=400, points=[squash(mean)])
    assert total == pytest.approx(1.0, abs=1e-2)


def test_log_prob_matches_density():
    out = sample_squashed_gaussian(np.full(50, 0.4), np.full(50, -0.3), np.random.default_rng(5))
    np.testing.assert_allclose(out.log_prob, squashed_log_density(out.sampled_action, 0.4, -0.3),
                               rtol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(-20, 20), st.floats(-30, 5), st.integers(0, 2**31))
def test_samples_inside_unit_interval(mean, log_std, seed):
    out = sample_squashed_gaussian(np.full(100, mean), np.full(100, log_std),
                                   np.random.default_rng(seed))
    assert np.all(out.sampled_action > 0) and np.all(out.sampled_action < 1)
    assert np.all(np.isfinite(out.log_prob))
    assert np.all(out.log_std >= LOG_STD_MIN) and np.all(out.log_std <= LOG_STD_MAX)


def test_entropy_monotone_in_log_std():
    # tanh saturation makes the entropy peak near log_std = -0.15 for a centred mean
    entropies = []
    for ls in np.linspace(-6.0, -0.3, 12):
        out = sample_squashed_gaussian(np.zeros(200_000), np.full(200_000, ls),
                                       np.random.default_rng(11))
        entropies.append(-out.log_prob.mean())
    assert np.all(np.diff(entropies) > 0)


def test_mlp_checkpoint_roundtrip(tmp_path):
    net = Mlp((4, 6, 2), np.random.default_rng(9), "tanh")
    save_mlp(net, tmp_path / "n.bin")
    back = load_mlp(tmp_path / "n.bin")
    assert back.sizes == net.sizes and back.activation == "tanh"
    assert np.array_equal(back.params, net.params)


def test_truncated_checkpoint(tmp_path):
    net = Mlp((4, 6, 2), np.random.default_rng(9))
    save_mlp(net, tmp_path / "n.bin")
    blob = (tmp_path / "n.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(blob[:-20])
    with pytest.raises(CheckpointError):
        load_mlp(tmp_path / "t.bin")
    (tmp_path / "g.bin").write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_mlp(tmp_path / "g.bin")
    with pytest.raises(CheckpointError):
        load_mlp(tmp_path / "missing.bin")


def test_float32_network_tracks_float64():
    rng = np.random.default_rng(8)
    net64 = Mlp((24, 64, 64, 2), rng)
    net32 = Mlp(net64.sizes, dtype=np.float32)
    net32.params[:] = net64.params
    x = rng.uniform(size=(256, 24))
    out64, out32 = net64.forward(x), net32.forward(x)
    assert out32.dtype == np.float32
    assert np.allclose(out32, out64, rtol=1e-4, atol=1e-5)
    g = rng.normal(size=(256, 2))
    (p64, i64), (p32, i32) = net64.backward(g), net32.backward(g)
    assert p32.dtype == np.float32
    assert np.allclose(p32, p64, rtol=1e-3, atol=1e-4)
    assert np.allclose(i32, i64, rtol=1e-3, atol=1e-5)


def test_float32_checkpoint_roundtrip(tmp_path):
    net = Mlp((3, 5, 1), np.random.default_rng(2), dtype=np.float32)
    save_mlp(net, tmp_path / "n.bin")
    back = load_mlp(tmp_path / "n.bin")
    assert back.params.dtype == np.float32 and np.array_equal(back.params, net.params)
