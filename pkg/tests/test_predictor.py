import numpy as np
import pytest
from conftest import FD_REL_TOL, relative_errors

from resshift import nn
from resshift.objective import ObjectiveSpec, PerceptualSpec
from resshift.predictor import (
    AdamState,
    Layout,
    NonFiniteLossError,
    PredictorParams,
    cosine_lr,
    init_params,
    load_checkpoint,
    loss_and_gradient,
    predict,
    save_checkpoint,
    sgd_adam_step,
)
from resshift.rng import make_rng
from resshift.schedule import ScheduleParams, build_schedule

S4 = build_schedule(ScheduleParams(T=4))
SMALL = Layout(channels=1, width=4, blocks=3, t_embed_dim=4)


def random_params(layout, seed=0, scale=0.3):
    # nonzero head/skip so every layer's gradient is exercised
    return PredictorParams(layout, scale * make_rng(seed).standard_normal(layout.n_params))


def make_batch(layout, B=2, size=8, seed=1):
    r = make_rng(seed)
    shape = (B, layout.channels, size, size)
    x0 = r.uniform(0, 1, shape)
    y0 = r.uniform(0, 1, shape)
    x_t = x0 + 0.3 * r.standard_normal(shape)
    t = np.arange(B) % S4.T + 1
    return x_t, y0, t, x0


def test_identity_at_init():
    layout = Layout()
    params = init_params(layout, make_rng(0))
    x_t = make_rng(1).standard_normal((1, 16, 16))
    y0 = make_rng(2).uniform(size=(1, 16, 16))
    np.testing.assert_array_equal(predict(params, x_t, y0, 3, S4), x_t)


@pytest.mark.parametrize("shape", [(1, 16, 16), (3, 8, 8)])
def test_output_shape(shape):
    layout = Layout(channels=shape[0], width=8)
    params = random_params(layout)
    x = np.zeros(shape)
    assert predict(params, x, x, 2).shape == shape
    assert predict(params, np.stack([x, x]), np.stack([x, x]), [1, 2]).shape == (2,) + shape


def test_rejects_bad_inputs():
    params = random_params(SMALL)
    with pytest.raises(ValueError):
        predict(params, np.zeros((1, 8, 8)), np.zeros((1, 8, 9)), 1)
    with pytest.raises(ValueError):
        predict(params, np.zeros((2, 8, 8)), np.zeros((2, 8, 8)), 1)
    with pytest.raises(ValueError):
        predict(params, np.zeros((1, 8, 8)), np.zeros((1, 8, 8)), 5, S4)
    with pytest.raises(ValueError):
        PredictorParams(SMALL, np.zeros(SMALL.n_params + 1))


def test_pack_unpack_round_trip():
    theta = make_rng(3).standard_normal(SMALL.n_params)
    np.testing.assert_array_equal(SMALL.pack(SMALL.unpack(theta)), theta)


def test_timestep_embedding_distinct_and_bounded():
    emb = nn.timestep_embedding(np.arange(1, 16), 32)
    assert emb.shape == (15, 32)
    assert np.abs(emb).max() <= 1.0
    # sin^2 + cos^2 = 1 per frequency
    np.testing.assert_allclose(emb[:, :16] ** 2 + emb[:, 16:] ** 2, 1.0)
    assert len({row.tobytes() for row in emb}) == 15


def test_const_conv_matches_broadcast_conv():
    r = make_rng(4)
    v = r.standard_normal((2, 5))
    w = r.standard_normal((3, 5, 3, 3))
    got, cache = nn.const_conv_forward(v, w, 6, 7)
    dense = np.broadcast_to(v[:, None, None, :], (2, 6, 7, 5)).copy()
    want, dcache = nn.conv2d_forward(dense, w, np.zeros(3))
    np.testing.assert_allclose(got, want, atol=1e-13)
    dout = r.standard_normal(want.shape)
    np.testing.assert_allclose(nn.const_conv_backward(dout, cache), nn.conv2d_backward(dout, dcache)[1], atol=1e-12)


def test_conv_input_adjoint(fd):
    r = make_rng(5)
    x = r.standard_normal((1, 5, 6, 2))
    w = r.standard_normal((3, 2, 3, 3))
    b = r.standard_normal(3)
    dout = r.standard_normal((1, 5, 6, 3))
    out, cache = nn.conv2d_forward(x, w, b)
    dx, dw, db = nn.conv2d_backward(dout, cache)
    f = lambda xx: float(np.sum(nn.conv2d_forward(xx, w, b)[0] * dout))
    idx = np.arange(x.size)
    assert relative_errors(dx.ravel(), fd(f, x.copy(), idx)).max() < 1e-7
    g = lambda ww: float(np.sum(nn.conv2d_forward(x, ww, b)[0] * dout))
    assert relative_errors(dw.ravel(), fd(g, w.copy(), np.arange(w.size))).max() < 1e-7


OBJECTIVES = {
    "L2": ObjectiveSpec(data_term="L2", lam=0.0, perceptual=None),
    "L1": ObjectiveSpec(data_term="L1", lam=0.0, perceptual=None),
    "L2-weighted": ObjectiveSpec(data_term="L2", use_elbo_weights=True, lam=0.0, perceptual=None),
    "L2+perceptual": ObjectiveSpec(data_term="L2", lam=1.0, perceptual=PerceptualSpec(channels=(4, 6), per_layer_weights=(1.0, 0.5))),
}


@pytest.mark.parametrize("name", list(OBJECTIVES))
@pytest.mark.parametrize("activation", ["silu", "tanh"])
def test_theta_gradient_finite_difference(name, activation, fd):
    layout = Layout(channels=1, width=4, blocks=3, t_embed_dim=4, activation=activation)
    params = random_params(layout)
    batch = make_batch(layout)
    objective = OBJECTIVES[name]
    _, grad = loss_and_gradient(params, batch, objective, S4)

    def f(theta):
        return loss_and_gradient(PredictorParams(layout, theta), batch, objective, S4)[0]

    # 64 coordinates from every parameter tensor
    r = make_rng(6)
    offset, errors = 0, []
    for pname, shape in layout.shapes():
        n = int(np.prod(shape))
        idx = offset + r.choice(n, size=min(64, n), replace=False)
        errors.append(relative_errors(grad[idx], fd(f, params.theta.copy(), idx)).max())
        offset += n
    assert max(errors) < FD_REL_TOL


def test_gradient_without_skip_or_residual(fd):
    layout = Layout(channels=2, width=3, blocks=2, t_embed_dim=0, residual=False, input_skip=False)
    params = random_params(layout, seed=2)
    batch = make_batch(layout, B=3, size=6)
    _, grad = loss_and_gradient(params, batch, OBJECTIVES["L2"], S4)
    f = lambda th: loss_and_gradient(PredictorParams(layout, th), batch, OBJECTIVES["L2"], S4)[0]
    idx = np.arange(layout.n_params)
    assert relative_errors(grad, fd(f, params.theta.copy(), idx)).max() < FD_REL_TOL


def test_non_finite_loss_reports_index():
    params = random_params(SMALL)
    x_t, y0, t, x0 = make_batch(SMALL, B=3)
    x0 = x0.copy()
    x0[1, 0, 2, 2] = np.nan
    with pytest.raises(NonFiniteLossError) as info:
        loss_and_gradient(params, (x_t, y0, t, x0), OBJECTIVES["L2"], S4)
    assert info.value.index == 1


def test_adam_matches_recursion():
    params = PredictorParams(SMALL, np.zeros(SMALL.n_params))
    state = AdamState.zeros(SMALL.n_params)
    r = make_rng(7)
    m = v = np.zeros(SMALL.n_params)
    theta = np.zeros(SMALL.n_params)
    for k in range(1, 6):
        g = r.standard_normal(SMALL.n_params)
        params, state = sgd_adam_step(params, g, state, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - 0.01 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
    assert state.step == 5
    np.testing.assert_allclose(params.theta, theta, rtol=1e-12, atol=1e-15)


def test_adam_first_step_is_sign_step():
    params = PredictorParams(SMALL, np.zeros(SMALL.n_params))
    g = make_rng(8).standard_normal(SMALL.n_params)
    new, _ = sgd_adam_step(params, g, AdamState.zeros(SMALL.n_params), 1e-3)
    np.testing.assert_allclose(new.theta, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_rejects_non_finite_gradient():
    params = random_params(SMALL)
    state = AdamState.zeros(SMALL.n_params)
    g = np.zeros(SMALL.n_params)
    g[3] = np.inf
    new, new_state = sgd_adam_step(params, g, state, 1e-3)
    assert new is params and new_state is state
    with pytest.raises(ValueError):
        sgd_adam_step(params, np.zeros(3), state, 1e-3)
    with pytest.raises(ValueError):
        sgd_adam_step(params, np.zeros(SMALL.n_params), state, 0.0)


def test_cosine_lr_endpoints():
    assert cosine_lr(0, 2000, 1e-3, 1e-4) == 1e-3
    assert cosine_lr(1999, 2000, 1e-3, 1e-4) == pytest.approx(1e-4, rel=1e-12)
    assert cosine_lr(999.5, 2000, 1e-3, 1e-4) == pytest.approx(5.5e-4)
    lrs = [cosine_lr(k, 100, 1e-3, 1e-4) for k in range(100)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_checkpoint_round_trip(tmp_path):
    params = random_params(SMALL)
    state = AdamState(make_rng(1).standard_normal(SMALL.n_params), make_rng(2).uniform(size=SMALL.n_params), 17)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, params, state, {"note": "x"})
    ck = load_checkpoint(path)
    assert ck.params.layout == SMALL
    np.testing.assert_array_equal(ck.params.theta, params.theta)
    np.testing.assert_array_equal(ck.state.m, state.m)
    np.testing.assert_array_equal(ck.state.v, state.v)
    assert ck.state.step == 17 and ck.meta == {"note": "x"}
    save_checkpoint(tmp_path / "b.ckpt", params, state, {"note": "x"})
    assert path.read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    save_checkpoint(path, random_params(SMALL))
    data = bytearray(path.read_bytes())
    data[:8] = b"NOTRIGHT"
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)
