import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from spinecho.dynamics import retrieval_efficiency_closed_form, storage_time
from spinecho.fitting import fit_lifetime_1e
from spinecho.photon_stats import (
    CorrelationPoint,
    DlczParams,
    ParameterError,
    UndefinedEstimateError,
    calibrate,
    g2_curve,
    g2_estimate,
    g2_from_counts,
    model_g2,
    model_probabilities,
    nonclassicality_margin,
    simulate_counts,
)

CALIBRATED = calibrate(0.0035, 0.0028, 24.3).params

def unit(hi=0.99):
    return st.floats(0.0, hi, allow_subnormal=False)


# any parameters in [0, 1)
params_st = st.builds(DlczParams, chi=unit(0.5), eta_w=unit(), eta_r=unit(), dark_w=unit(0.2), dark_r=unit(0.2), n_pi=unit(0.2))
# weak-excitation regime where the leading-order model is a valid probability model
weak_st = st.builds(DlczParams, chi=unit(0.05), eta_w=unit(0.8), eta_r=unit(0.5), dark_w=unit(0.1), dark_r=unit(0.1), n_pi=unit(0.1))


def test_estimate_examples():
    assert g2_estimate(0.0035, 0.0028, 0.0035 * 0.0028) == pytest.approx(1.0, rel=1e-14)
    assert g2_estimate(0.0035, 0.0028, 24.3 * 0.0035 * 0.0028) == pytest.approx(24.3, rel=1e-12)
    assert g2_estimate(0.0035, 0.0028, 2.3814e-4) == pytest.approx(24.3, rel=1e-4)
    assert g2_estimate(0.0035, 0.0028, 0.0) == 0.0


def test_estimate_undefined():
    with pytest.raises(UndefinedEstimateError):
        g2_estimate(0.0, 0.1, 0.0)
    with pytest.raises(UndefinedEstimateError):
        g2_from_counts(10, 0, 0, 100)


def test_uncorrelated_model():
    p = CALIBRATED.replace(chi=0.0, dark_w=0.001, n_pi=0.002)
    p_w, p_r, p_wr = model_probabilities(p, 0.7, echo_on=True)
    assert p_wr == pytest.approx(p_w * (p.dark_r + p.n_pi), rel=1e-14)
    assert g2_estimate(p_w, p_r, p_wr) == pytest.approx(1.0, rel=1e-12)


def test_calibration_reproduces_targets():
    p_w, p_r, p_wr = model_probabilities(CALIBRATED, 1.0, echo_on=False)
    assert p_w == pytest.approx(0.0035, rel=1e-12)
    assert p_r == pytest.approx(0.0028, rel=1e-12)
    assert g2_estimate(p_w, p_r, p_wr) == pytest.approx(24.3, rel=1e-12)
    # frozen closed-form values
    assert CALIBRATED.chi == pytest.approx(0.9 / 23.3, rel=1e-12)
    assert CALIBRATED.eta_r == pytest.approx(23.3 * 0.0028, rel=1e-12)
    assert CALIBRATED.dark_r == pytest.approx(0.1 * 0.0028, rel=1e-12)


def test_calibration_with_measured_background():
    cal = calibrate(0.0035, 0.0028, 24.3, p_r_background=0.0005)
    assert cal.params.dark_r == 0.0005
    assert cal.dark_fraction == pytest.approx(0.0005 / 0.0028)
    assert model_g2(cal.params, 1.0, False) == pytest.approx(24.3, rel=1e-12)


def test_calibration_rejects_classical_input():
    with pytest.raises(ParameterError):
        calibrate(0.0035, 0.0028, 0.9)
    with pytest.raises(ParameterError):
        calibrate(0.0035, 0.0028, 24.3, p_r_background=0.003)


def test_parameter_validation():
    with pytest.raises(ParameterError):
        DlczParams(chi=1.2, eta_w=0.1, eta_r=0.1)
    with pytest.raises(ParameterError):
        DlczParams(chi=0.9, eta_w=0.1, eta_r=0.9, dark_r=0.1, n_pi=0.1)
    with pytest.raises(ParameterError):
        model_probabilities(CALIBRATED, 1.5, False)


def test_echo_on_initial_value():
    p = CALIBRATED.replace(n_pi=0.008)
    g2 = model_g2(p, 0.97**2, echo_on=True)
    assert 4 <= g2 <= 8


def test_better_pulses_push_g2_above_ten():
    from spinecho.noise import scale_noise_probability

    p = CALIBRATED.replace(n_pi=scale_noise_probability(0.008, 0.03, 0.01))
    assert model_g2(p, 0.99**2, echo_on=True) > 10


def test_margin_examples():
    m, ok = nonclassicality_margin(CorrelationPoint(0, 0, 0, 0, 24.3))
    assert m == pytest.approx(22.3) and ok
    m, ok = nonclassicality_margin(CorrelationPoint(0, 0, 0, 0, 2.0))
    assert m == 0.0 and not ok
    assert nonclassicality_margin(CorrelationPoint(0, 0, 0, 0, 5.2, 0.1))[1]
    assert not nonclassicality_margin(CorrelationPoint(0, 0, 0, 0, 2.05, 0.1))[1]


def test_zero_probabilities_give_zero_counts():
    zero = DlczParams(0.0, 0.0, 0.0)
    assert simulate_counts(zero, 1.0, False, 10_000, seed=0) == (0, 0, 0)


def test_counts_deterministic_across_workers():
    a = simulate_counts(CALIBRATED, 1.0, False, 300_000, seed=5, workers=1)
    b = simulate_counts(CALIBRATED, 1.0, False, 300_000, seed=5, workers=3)
    assert a == b
    assert a != simulate_counts(CALIBRATED, 1.0, False, 300_000, seed=6)


def test_counts_unbiased_at_1e6():
    n = 1_000_000
    g2, se = g2_from_counts(*simulate_counts(CALIBRATED, 1.0, False, n, seed=2), n)
    assert abs(g2 - model_g2(CALIBRATED, 1.0, False)) < 3 * se


def test_count_stderr_matches_scatter():
    # delta-method stderr vs spread over independent seeds
    n = 200_000
    vals = [g2_from_counts(*simulate_counts(CALIBRATED, 1.0, False, n, seed=s), n) for s in range(40)]
    g2s = np.array([v[0] for v in vals])
    se = np.mean([v[1] for v in vals])
    assert g2s.std(ddof=1) == pytest.approx(se, rel=0.3)


def test_echo_off_lifetime_against_model_oracle(geom, spec):
    # (g2 - 1) ~ eta / (a eta + b): at the reference calibration its 1/e point is where
    # eta / (0.9 eta + 0.1) = 1/e, i.e. T = tau_s * sqrt(-ln eta*)
    T = np.linspace(1e-6, 600e-6, 400)
    g2 = np.array([p.g2 for p in g2_curve(CALIBRATED, geom, spec, T, echo_on=False)])
    eta_star = 0.1 * math.exp(-1) / (1 - 0.9 * math.exp(-1))
    t_oracle = storage_time(geom, spec) * math.sqrt(-math.log(eta_star))
    target = (g2[0] - 1) * math.exp(-1)
    t_model = np.interp(-target, -(g2 - 1), T)
    assert t_model == pytest.approx(t_oracle, rel=2e-3)


def test_background_dominated_lifetime_tracks_efficiency(geom, spec):
    # with p_r dominated by background, (g2 - 1) is proportional to eta
    p = calibrate(0.0035, 0.0028, 1.5, dark_fraction=0.98).params
    T = np.linspace(1e-6, 600e-6, 60)
    g2 = np.array([pt.g2 for pt in g2_curve(p, geom, spec, T, echo_on=False)])
    fit = fit_lifetime_1e(np.column_stack([T, g2]), form="gaussian", baseline=1.0)
    assert fit["tau"] == pytest.approx(storage_time(geom, spec), rel=0.25)


def test_curve_flags_infeasible_points(geom, spec):
    g = geom.replace(theta_pi=math.radians(0.3))
    pts = g2_curve(CALIBRATED.replace(n_pi=0.008), g, spec, [100e-6, 200e-6], echo_on=True, epsilon=0.03)
    assert all(p.flags and p.flags[0].startswith("infeasible") for p in pts)
    assert all(math.isnan(p.g2) for p in pts)


def test_curve_mc_matches_closed_form(geom, small_spec):
    T = [50e-6, 300e-6, 1000e-6]
    p = CALIBRATED.replace(n_pi=0.008)
    cf = g2_curve(p, geom, small_spec, T, True, 0.03, "closed_form", True)
    mc = g2_curve(p, geom, small_spec, T, True, 0.03, "mc", True, seed=1)
    for a, b in zip(cf, mc):
        assert b.g2 == pytest.approx(a.g2, rel=0.05)


def test_simulated_curve_carries_count_stderr(geom, spec):
    pts = g2_curve(CALIBRATED, geom, spec, [10e-6, 100e-6], False, n_trials=200_000, simulate=True, seed=3)
    assert all(p.stderr_g2 > 0 for p in pts)
    for p in pts:
        eta = retrieval_efficiency_closed_form(geom, spec, p.T)
        assert abs(p.g2 - model_g2(CALIBRATED, eta, False)) < 4 * p.stderr_g2


@given(params_st, unit(1.0), st.booleans())
def test_g2_at_least_one(p, eta, echo):
    assume(p.chi * p.eta_w + p.dark_w > 0 and p.chi * p.eta_r * eta + p.dark_r + (p.n_pi if echo else 0) > 0)
    assert model_g2(p, eta, echo) >= 1.0


@given(weak_st, unit(1.0), st.booleans())
def test_weak_regime_probabilities_valid(p, eta, echo):
    p_w, p_r, p_wr = model_probabilities(p, eta, echo)
    assert 0 <= p_wr <= min(p_w, p_r)
    # keep p_w * p_r inside the normal float range
    if p_w * p_r > 1e-300:
        assert g2_estimate(p_w, p_r, p_wr) >= 1 - 1e-12


def test_strong_excitation_overflow_rejected():
    with pytest.raises(ParameterError):
        model_probabilities(DlczParams(0.5, 0.9, 0.9, 0.0, 0.0, 0.0), 1.0, False)


@given(weak_st, unit(1.0), st.booleans())
def test_estimate_matches_algebraic_g2(p, eta, echo):
    p_w, p_r, p_wr = model_probabilities(p, eta, echo)
    # keep p_w * p_r inside the normal float range
    assume(p_w * p_r > 1e-300)
    assert g2_estimate(p_w, p_r, p_wr) == pytest.approx(model_g2(p, eta, echo), rel=1e-12)


@given(st.floats(0.0, 0.05), st.floats(1e-4, 0.05), st.floats(0.05, 1.0))
def test_g2_decreases_with_pi_noise(n_pi, dn, eta):
    a = model_g2(CALIBRATED.replace(n_pi=n_pi), eta, True)
    b = model_g2(CALIBRATED.replace(n_pi=n_pi + dn), eta, True)
    assert b < a


@given(st.integers(0, 2**32), st.integers(1, 5000))
def test_counts_consistent(seed, n):
    n_w, n_r, n_wr = simulate_counts(CALIBRATED.replace(chi=0.3, eta_w=0.5), 0.8, False, n, seed)
    assert 0 <= n_wr <= min(n_w, n_r) and max(n_w, n_r) <= n
