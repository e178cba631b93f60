import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import DT_600, LAMBDA, SCAN_HALF_WIDTH, rel
from spinecho.dynamics import retrieval_efficiency_closed_form
from spinecho.ensemble import EnsembleSpec
from spinecho.geometry import BeamGeometry, raman_wavevector, spinwave_wavevector
from spinecho.scheduler import (
    EchoSchedule,
    InfeasibleScheduleError,
    locate_peak,
    minimum_theta_pi,
    ratio_vs_angle,
    scan_delta_t,
    scan_width,
    schedule_for,
)


def test_reference_schedule(geom):
    s = schedule_for(geom, 600e-6)
    assert s.dt == pytest.approx(157.2e-6, abs=0.1e-6)
    assert rel(s.dt, DT_600) < 2e-3
    assert s.t1 == pytest.approx((600e-6 - s.dt) / 2)
    assert [p.sign for p in s.pulses] == [1, -1]


def test_equal_angles_half_spacing():
    g = BeamGeometry(LAMBDA, LAMBDA, LAMBDA, math.radians(1.5), math.radians(1.5))
    assert schedule_for(g, 100e-6).dt == pytest.approx(50e-6, rel=1e-12)


def test_zero_readout_time_rejected(geom):
    with pytest.raises(ValueError):
        schedule_for(geom, 0.0)


def test_schedule_invariant_enforced():
    with pytest.raises(ValueError):
        EchoSchedule(1e-4, 1e-4, 2e-4)


def test_small_raman_angle_infeasible(geom):
    g = geom.replace(theta_pi=0.8 * minimum_theta_pi(geom))
    with pytest.raises(InfeasibleScheduleError):
        schedule_for(g, 600e-6)


def test_fixed_t1_outside_window(geom):
    with pytest.raises(InfeasibleScheduleError):
        schedule_for(geom, 600e-6, t1=500e-6)


def test_scan_peak_and_width(geom, spec):
    c = scan_delta_t(geom, spec, 600e-6)
    center, width = locate_peak(c.dt, c.eta)
    assert center == pytest.approx(schedule_for(geom, 600e-6).dt, rel=1e-6)
    assert width == pytest.approx(scan_width(geom, spec), rel=1e-6)
    assert rel(width, SCAN_HALF_WIDTH) < 1e-3


def test_scan_cold_limit_is_flat(geom, spec):
    cold = spec.replace(temperature=1e-15)
    c = scan_delta_t(geom, cold, 600e-6, dt_range=(10e-6, 590e-6), n_points=11)
    np.testing.assert_allclose(c.eta, 1.0, atol=1e-6)


def test_scan_peak_within_one_step(geom, spec):
    c = scan_delta_t(geom, spec, 600e-6, n_points=31)
    step = c.dt[1] - c.dt[0]
    assert abs(c.dt[np.argmax(c.eta)] - schedule_for(geom, 600e-6).dt) <= step


def test_scan_rejects_bad_range(geom, spec):
    with pytest.raises(ValueError):
        scan_delta_t(geom, spec, 600e-6, dt_range=(300e-6, 700e-6))
    with pytest.raises(ValueError):
        scan_delta_t(geom, spec, 600e-6, mode="fast")


@given(st.floats(0.0, 60e-6))
def test_scan_symmetric_about_optimum(delta):
    g = BeamGeometry.from_degrees()
    s = EnsembleSpec(10, 15e-6, (5e-4, 5e-4, 1.5e-4), 1.02e-4)
    # |c|^2 is a parabola in dt centred on the projection of k_s onto k_pi
    ks, kp = spinwave_wavevector(g), raman_wavevector(g)
    opt = (ks @ kp) / (2 * kp @ kp) * 600e-6
    a = retrieval_efficiency_closed_form(g, s, 600e-6, opt + delta)
    b = retrieval_efficiency_closed_form(g, s, 600e-6, opt - delta)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-300)


def test_ratio_examples(geom, spec):
    pts = ratio_vs_angle(geom, [math.radians(2.1), 2 * geom.theta_s, math.radians(1.2), math.radians(2.4)], spec)
    assert pts[0].ratio == pytest.approx(0.262, abs=5e-4)
    assert pts[1].ratio == pytest.approx(0.25, abs=5e-4)
    # 1/theta_pi law: doubling the angle halves the ratio
    assert pts[3].ratio / pts[2].ratio == pytest.approx(0.5, rel=1e-3)


@given(st.floats(1.2, 4.0))
def test_ratio_matches_law_within_grid_step(theta_deg):
    g = BeamGeometry.from_degrees(1.1, theta_deg)
    s = EnsembleSpec(10, 15e-6, (5e-4, 5e-4, 1.5e-4), 1.02e-4)
    (p,) = ratio_vs_angle(g, [g.theta_pi], s, n_points=41)
    c = scan_delta_t(g, s, 600e-6, n_points=41)
    step = c.dt[1] - c.dt[0]
    assert abs(p.ratio - p.ratio_theory) < step / 600e-6


def test_locate_peak_exact_on_gaussian():
    x = np.linspace(0, 10, 21)
    y = 2.0 * np.exp(-(((x - 4.3) / 1.7) ** 2))
    c, w = locate_peak(x, y)
    assert c == pytest.approx(4.3, rel=1e-12) and w == pytest.approx(1.7, rel=1e-12)


def test_locate_peak_needs_bracket():
    with pytest.raises(ValueError):
        locate_peak(np.arange(5.0), np.arange(5.0) + 1)
