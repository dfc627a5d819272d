import numpy as np
import pytest
from conftest import FD_REL_TOL, relative_errors
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from resshift.kernel import elbo_weight
from resshift.objective import ObjectiveSpec, PerceptualSpec, data_loss, perceptual_loss, total_loss
from resshift.rng import make_rng
from resshift.schedule import ScheduleParams, build_schedule

S15 = build_schedule(ScheduleParams(T=15))
L2 = ObjectiveSpec(data_term="L2", lam=0.0, perceptual=None)
L1 = ObjectiveSpec(data_term="L1", lam=0.0, perceptual=None)
L2W = ObjectiveSpec(data_term="L2", use_elbo_weights=True, lam=0.0, perceptual=None)
PSPEC = PerceptualSpec()


def pair(shape=(1, 8, 8), seed=0):
    r = make_rng(seed)
    return r.uniform(0, 1, shape), r.uniform(0, 1, shape)


def test_scalar_l2_example():
    value, grad = data_loss(np.array([0.5]), np.array([0.2]), 3, L2, S15)
    assert value == pytest.approx(0.09)
    assert grad == pytest.approx([0.6])


def test_zero_at_equality():
    a, _ = pair()
    for spec in (L2, L1, L2W):
        assert data_loss(a, a, 5, spec, S15)[0] == 0.0
    assert perceptual_loss(a, a, PSPEC)[0] == 0.0


@pytest.mark.parametrize("t", [2, 7, 15])
def test_weighted_is_scaled_unweighted(t):
    a, b = pair()
    w, _ = elbo_weight(t, S15)
    assert data_loss(a, b, t, L2W, S15)[0] == pytest.approx(w * data_loss(a, b, t, L2, S15)[0], rel=1e-14)


def test_weighted_at_first_step_uses_sentinel():
    a, b = pair()
    assert data_loss(a, b, 1, L2W, S15)[0] == data_loss(a, b, 1, L2, S15)[0]


def test_l2_homogeneity():
    a, b = pair()
    v1 = data_loss(b + (a - b), b, 3, L2, S15)[0]
    v2 = data_loss(b + 2 * (a - b), b, 3, L2, S15)[0]
    assert v2 == pytest.approx(4 * v1)


def test_lambda_zero_is_data_loss():
    a, b = pair()
    spec = ObjectiveSpec(lam=0.0)
    v, g = total_loss(a, b, 4, spec, S15)
    vd, gd = data_loss(a, b, 4, spec, S15)
    assert v == vd
    np.testing.assert_array_equal(g, gd)


def test_total_adds_perceptual():
    a, b = pair()
    spec = ObjectiveSpec(lam=0.5)
    v = total_loss(a, b, 4, spec, S15)[0]
    assert v == pytest.approx(data_loss(a, b, 4, spec, S15)[0] + 0.5 * perceptual_loss(a, b, PSPEC)[0])


def test_shape_mismatch():
    with pytest.raises(ValueError):
        data_loss(np.zeros(3), np.zeros(4), 2, L2, S15)
    with pytest.raises(ValueError):
        perceptual_loss(np.zeros((8, 8)), np.zeros((8, 9)), PSPEC)


def test_perceptual_needs_spatial_input():
    with pytest.raises(ValueError):
        perceptual_loss(np.zeros(9), np.zeros(9), PSPEC)
    with pytest.raises(ValueError, match="receptive field"):
        perceptual_loss(np.zeros((4, 4)), np.ones((4, 4)), PSPEC)


def test_perceptual_deterministic_in_seed():
    a, b = pair()
    assert perceptual_loss(a, b, PSPEC)[0] == perceptual_loss(a, b, PerceptualSpec())[0]
    assert perceptual_loss(a, b, PSPEC)[0] != perceptual_loss(a, b, PerceptualSpec(seed=1))[0]


def test_spec_validation():
    with pytest.raises(ValueError):
        ObjectiveSpec(data_term="L3")
    with pytest.raises(ValueError):
        ObjectiveSpec(lam=-1.0)
    with pytest.raises(ValueError):
        ObjectiveSpec(lam=1.0, perceptual=None)
    with pytest.raises(ValueError):
        PerceptualSpec(per_layer_weights=(1.0, -1.0))


@given(arrays(np.float64, (1, 6, 6), elements=st.floats(0, 1)), arrays(np.float64, (1, 6, 6), elements=st.floats(0, 1)))
@settings(max_examples=40, deadline=None)
def test_perceptual_symmetric_nonnegative(a, b):
    ab = perceptual_loss(a, b, PSPEC)[0]
    assert ab >= 0
    assert ab == pytest.approx(perceptual_loss(b, a, PSPEC)[0], rel=1e-12, abs=1e-15)


CASES = {
    "L2": lambda a, b: data_loss(a, b, 6, L2, S15),
    "L1": lambda a, b: data_loss(a, b, 6, L1, S15),
    "L2-weighted": lambda a, b: data_loss(a, b, 6, L2W, S15),
    "perceptual": lambda a, b: perceptual_loss(a, b, PerceptualSpec(per_layer_weights=(1.0, 0.3))),
    "L2+perceptual": lambda a, b: total_loss(a, b, 6, ObjectiveSpec(lam=1.0), S15),
    "L1+perceptual-rgb": lambda a, b: total_loss(a, b, 6, ObjectiveSpec(data_term="L1", lam=2.0), S15),
}


@pytest.mark.parametrize("name", list(CASES))
def test_gradient_finite_difference(name, fd):
    shape = (3, 8, 8) if name.endswith("rgb") else (1, 8, 8)
    a, b = pair(shape, seed=3)
    f = CASES[name]
    _, grad = f(a, b)
    idx = make_rng(9).choice(a.size, size=64, replace=False)
    numeric = fd(lambda x: f(x, b)[0], a.copy(), idx)
    assert relative_errors(grad.ravel()[idx], numeric).max() < FD_REL_TOL
