import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resshift.schedule import (
    ScheduleParams,
    build_schedule,
    first_eta,
    format_schedule_csv,
    relative_noise_intensity,
    write_schedule_csv,
)

# 50-digit mpmath recomputation for T=15, p=0.3, kappa=2, frozen here.
B0_T15 = 1.3223288766207562
ETA_T15_INTERIOR = [
    0.013846966202474563,
    0.03141622429545649,
    0.055243169784453203,
    0.086137919743949918,
    0.12494762494190261,
    0.17257511135691412,
    0.22998100782775946,
    0.29818470187186927,
    0.37826551738352659,
    0.47136418370250427,
    0.5786845264219517,
    0.70149531861380972,
    0.84113225165219717,
]


@pytest.fixture(scope="module")
def s15():
    return build_schedule(ScheduleParams(T=15, p=0.3, kappa=2.0))


def test_endpoints_t15(s15):
    assert s15.eta[0] == 4e-4
    assert s15.eta[-1] == 0.999
    assert s15.eta_at(0) == 0.0


def test_interior_matches_high_precision(s15):
    assert abs(s15.b0 - B0_T15) / B0_T15 < 1e-13
    rel = np.abs(s15.eta[1:-1] - ETA_T15_INTERIOR) / np.array(ETA_T15_INTERIOR)
    assert rel.max() < 1e-12


def test_alpha_8(s15):
    assert s15.alpha_at(8) == pytest.approx(0.0574058964708, abs=1e-12)


def test_first_eta_rules():
    assert first_eta(ScheduleParams(T=4, kappa=2.0)) == pytest.approx(4e-4)
    # large kappa: the cap binds
    assert first_eta(ScheduleParams(T=4, kappa=1.0)) == 0.001
    assert first_eta(ScheduleParams(T=4, kappa=40.0)) == pytest.approx(1e-6)


def test_single_step_is_full_shift():
    s = build_schedule(ScheduleParams(T=1))
    assert s.eta.tolist() == [0.999]
    assert s.alpha.tolist() == [0.999]


def test_arrays_read_only(s15):
    with pytest.raises(ValueError):
        s15.eta[0] = 0.5


@pytest.mark.parametrize(
    "kwargs",
    [dict(T=0), dict(T=4, p=0.0), dict(T=4, kappa=-1.0), dict(T=4, eta_T=1.0), dict(T=4, eta_T=1e-5)],
)
def test_bad_params_rejected(kwargs):
    with pytest.raises(ValueError):
        build_schedule(ScheduleParams(**kwargs))


def test_step_range_checks(s15):
    with pytest.raises(ValueError):
        s15.eta_at(16)
    with pytest.raises(ValueError):
        s15.check_step(0)


def test_ldm_curve_endpoints():
    s = build_schedule(ScheduleParams(T=1000, p=0.8, kappa=40.0))
    rel = relative_noise_intensity(s)
    assert abs(rel[0] - 0.04) < 1e-12
    assert abs(rel[-1] - 39.979994997498436) < 1e-12
    assert np.all(np.diff(rel) > 0)


def test_csv_round_trip(tmp_path, s15):
    path = tmp_path / "s.csv"
    write_schedule_csv(s15, path)
    assert path.read_text() == format_schedule_csv(s15)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 15
    assert [float(r["eta"]) for r in rows] == s15.eta.tolist()
    assert float(rows[0]["rel_noise"]) == pytest.approx(0.04)


schedules = st.builds(
    ScheduleParams,
    T=st.integers(2, 400),
    p=st.floats(0.05, 3.0),
    kappa=st.floats(0.1, 50.0),
)


@given(schedules)
@settings(max_examples=60, deadline=None)
def test_monotone_and_telescoping(params):
    s = build_schedule(params)
    assert np.all(np.diff(s.eta) > 0)
    assert np.all(s.alpha > 0)
    assert math.isclose(s.alpha.sum(), params.eta_T, rel_tol=1e-12)
    assert s.eta[-1] == params.eta_T


@given(schedules)
@settings(max_examples=60, deadline=None)
def test_geometric_identity(params):
    s = build_schedule(params)
    eta_1 = first_eta(params)
    log_ratio = np.log(np.sqrt(s.eta[1:-1] / eta_1)) / math.log(s.b0)
    np.testing.assert_allclose(log_ratio, s.beta[1:-1], rtol=1e-9, atol=1e-9)


@given(st.integers(3, 200), st.floats(0.1, 1.5), st.floats(0.05, 1.0))
@settings(max_examples=60, deadline=None)
def test_larger_p_shifts_slower_early(T, p, dp):
    lo = build_schedule(ScheduleParams(T=T, p=p, kappa=2.0))
    hi = build_schedule(ScheduleParams(T=T, p=p + dp, kappa=2.0))
    assert np.all(hi.eta[1:-1] <= lo.eta[1:-1] * (1 + 1e-12))
