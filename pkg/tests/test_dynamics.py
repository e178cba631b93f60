import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import TAU_S, rel
from spinecho.dynamics import (
    PulseEvent,
    SequencingError,
    SpinWaveState,
    apply_pi_pulse,
    free_evolve,
    imprint,
    retrieval_efficiency_closed_form,
    retrieval_efficiency_mc,
    retrieval_stats,
    simulate_readout,
    storage_time,
)
from spinecho.ensemble import AtomSample, EnsembleSpec, sample_atoms
from spinecho.geometry import BeamGeometry, raman_wavevector, spinwave_wavevector
from spinecho.scheduler import schedule_for

K_X = np.array([1.517e5, 0.0, 0.0])


def one_atom(x=(0.0, 0.0, 0.0), v=(0.0, 0.0, 0.0)):
    return AtomSample(np.array([x], float), np.array([v], float), np.ones(1))


def test_zero_wavevector_gives_zero_phase():
    atoms = sample_atoms(EnsembleSpec(50, 1e-5, (1e-4, 1e-4, 1e-4), 1e-4), 0)
    assert np.all(imprint(atoms, np.zeros(3)).phases == 0)


def test_imprint_dot_product():
    s = imprint(one_atom((10e-6, 0, 0)), K_X)
    assert s.phases[0] == pytest.approx(1.517, rel=1e-12)


@given(st.lists(st.floats(-1e-3, 1e-3), min_size=3, max_size=3))
def test_imprint_translation_covariant(d):
    atoms = sample_atoms(EnsembleSpec(20, 1e-5, (1e-4, 1e-4, 1e-4), 1e-4), 1)
    k = np.array([1e5, -2e4, 3e3])
    shift = imprint(atoms.translated(np.array(d)), k).phases - imprint(atoms, k).phases
    np.testing.assert_allclose(shift, k @ np.array(d), atol=1e-9)


def test_free_evolve_zero_dt_is_identity():
    atoms = one_atom(v=(0.03, 0, 0))
    s = imprint(atoms, K_X)
    assert free_evolve(s, atoms, 0.0) is s


def test_static_atoms_do_not_dephase():
    atoms = one_atom((1e-5, 2e-5, 0))
    s = free_evolve(imprint(atoms, K_X), atoms, 1e-3)
    assert s.mismatch[0] == 0.0


def test_free_evolution_phase_advance():
    atoms = one_atom(v=(0.0379, 0, 0))
    s = free_evolve(imprint(atoms, K_X), atoms, 174e-6)
    assert s.mismatch[0] == pytest.approx(1.517e5 * 0.0379 * 174e-6, rel=1e-12)
    assert s.mismatch[0] == pytest.approx(1.0, abs=0.01)


def _two_pulses(atoms, k_s, k_pi, t1, t2, eps=0.0):
    s = free_evolve(imprint(atoms, k_s), atoms, t1)
    s = apply_pi_pulse(s, atoms, PulseEvent(t1, k_pi, eps, +1))
    s = free_evolve(s, atoms, t2 - t1)
    return apply_pi_pulse(s, atoms, PulseEvent(t2, k_pi, eps, -1))


def test_coincident_pulses_cancel():
    atoms = sample_atoms(EnsembleSpec(100, 1e-4, (1e-4, 1e-4, 1e-4), 1e-4), 2)
    s0 = free_evolve(imprint(atoms, K_X), atoms, 1e-4)
    s = _two_pulses(atoms, K_X, np.array([2.9e5, 0, 0]), 1e-4, 1e-4)
    np.testing.assert_allclose(s.phases, s0.phases, atol=1e-9)


def test_two_pulse_phase_is_2kpi_v_dt():
    atoms = sample_atoms(EnsembleSpec(100, 1e-4, (1e-4, 1e-4, 1e-4), 1e-4), 3)
    k_pi = np.array([2.9e5, 1e3, -3e3])
    t1, t2 = 1e-4, 2.7e-4
    s = _two_pulses(atoms, K_X, k_pi, t1, t2)
    net = s.phases - imprint(atoms, K_X).phases
    np.testing.assert_allclose(net, 2 * (atoms.velocities @ k_pi) * (t2 - t1), rtol=1e-9, atol=1e-12)


def test_pulse_survival_factor():
    atoms = one_atom()
    s = _two_pulses(atoms, K_X, np.array([2.9e5, 0, 0]), 1e-5, 2e-5, eps=0.04)
    assert s.survival[0] == pytest.approx(0.9216, rel=1e-14)
    assert retrieval_efficiency_mc(s) == pytest.approx(0.9216, rel=1e-12)


def test_pulse_time_must_match_state():
    atoms = one_atom()
    s = imprint(atoms, K_X)
    with pytest.raises(SequencingError):
        apply_pi_pulse(s, atoms, PulseEvent(1e-5, K_X))


def test_pulse_sign_must_alternate():
    atoms = one_atom()
    s = imprint(atoms, K_X)
    with pytest.raises(SequencingError):
        apply_pi_pulse(s, atoms, PulseEvent(0.0, K_X, 0.0, -1))


@pytest.mark.parametrize("kwargs", [dict(time=-1.0), dict(epsilon=0.6), dict(sign=0)])
def test_invalid_pulse(kwargs):
    base = dict(time=0.0, k_pi=K_X)
    base.update(kwargs)
    with pytest.raises(ValueError):
        PulseEvent(**base)


def test_odd_pulse_count_kills_readout(geom, small_spec):
    atoms = sample_atoms(small_spec, 4)
    s = free_evolve(imprint(atoms, spinwave_wavevector(geom)), atoms, 1e-4)
    s = apply_pi_pulse(s, atoms, PulseEvent(1e-4, raman_wavevector(geom), 0.0, +1))
    # only the random-phase floor ~ 1 / N_eff is left
    n_eff = atoms.weights.sum() ** 2 / (atoms.weights**2).sum()
    assert retrieval_efficiency_mc(s) < 10 / n_eff


def test_fresh_state_efficiency_is_one(small_spec, geom):
    atoms = sample_atoms(small_spec, 5)
    assert retrieval_efficiency_mc(imprint(atoms, spinwave_wavevector(geom))) == pytest.approx(1.0, abs=1e-12)


def test_antiphase_pair_gives_zero():
    s = SpinWaveState(np.array([0.0, math.pi]), np.zeros(2), np.ones(2), np.zeros(2), K_X)
    assert retrieval_efficiency_mc(s) == pytest.approx(0.0, abs=1e-30)


def test_single_atom_is_perfect(geom):
    a = sample_atoms(EnsembleSpec(1, 15e-6, (1e-4, 1e-4, 1e-4), 1e-4), 0)
    assert simulate_readout(a, geom, 500e-6)[0] == pytest.approx(1.0, abs=1e-12)


def test_mc_decay_at_storage_time(geom, spec):
    atoms = sample_atoms(spec, 11)
    tau = storage_time(geom, spec)
    eta, se = simulate_readout(atoms, geom, tau)
    assert abs(eta - math.exp(-1)) < 3 * se


def test_closed_form_oracles(geom, spec):
    assert retrieval_efficiency_closed_form(geom, spec, 0.0) == 1.0
    assert rel(storage_time(geom, spec), TAU_S) < 3e-4
    assert retrieval_efficiency_closed_form(geom, spec, 174e-6) == pytest.approx(math.exp(-1), rel=2e-3)
    sched = schedule_for(geom, 600e-6)
    assert retrieval_efficiency_closed_form(geom, spec, 600e-6, sched.dt) == pytest.approx(1.0, abs=1e-5)


def test_epsilon_reduces_closed_form_by_survival(geom, spec):
    dt = schedule_for(geom, 600e-6).dt
    base = retrieval_efficiency_closed_form(geom, spec, 600e-6, dt)
    assert retrieval_efficiency_closed_form(geom, spec, 600e-6, dt, 0.03) / base == pytest.approx(0.97**2, rel=1e-12)


def test_mode_exit_reduces_efficiency(geom, spec):
    dt = schedule_for(geom, 2e-3).dt
    plain = retrieval_efficiency_closed_form(geom, spec, 2e-3, dt)
    exit_ = retrieval_efficiency_closed_form(geom, spec, 2e-3, dt, mode_exit=True)
    assert exit_ < plain
    assert retrieval_efficiency_closed_form(geom, spec, 0.0, mode_exit=True) == pytest.approx(1.0, rel=1e-12)


def test_mode_exit_mc_matches_closed_form(geom, spec):
    atoms = sample_atoms(spec, 12)
    T = 2e-3
    s = schedule_for(geom, T)
    eta, se = simulate_readout(atoms, geom, T, s.t1, s.t2, mode_exit=True, mode_waist=spec.mode_waist)
    cf = retrieval_efficiency_closed_form(geom, spec, T, s.dt, mode_exit=True)
    assert abs(eta - cf) < 5 * se


@given(st.floats(1e-6, 1e-3), st.floats(1e-6, 1e-3))
def test_no_pulse_decay_is_monotone(t_a, t_b):
    g = BeamGeometry.from_degrees()
    s = EnsembleSpec(10, 15e-6, (5e-4, 5e-4, 1.5e-4), 1.02e-4)
    lo, hi = sorted((t_a, t_b))
    if hi - lo > 1e-9:
        assert retrieval_efficiency_closed_form(g, s, hi) < retrieval_efficiency_closed_form(g, s, lo)


@given(st.lists(st.floats(-1e-2, 1e-2), min_size=3, max_size=3), st.randoms(use_true_random=False))
def test_translation_and_permutation_invariance(d, rnd):
    g = BeamGeometry.from_degrees()
    atoms = sample_atoms(EnsembleSpec(300, 15e-6, (5e-4, 5e-4, 1.5e-4), 1.02e-4), 6)
    eta = simulate_readout(atoms, g, 3e-4, 1e-4, 2e-4)[0]
    moved = AtomSample(atoms.positions + np.array(d), atoms.velocities, atoms.weights)
    perm = list(range(len(atoms)))
    rnd.shuffle(perm)
    assert simulate_readout(moved, g, 3e-4, 1e-4, 2e-4)[0] == pytest.approx(eta, rel=1e-6, abs=1e-12)
    assert simulate_readout(atoms.subset(perm), g, 3e-4, 1e-4, 2e-4)[0] == pytest.approx(eta, rel=1e-9, abs=1e-15)


@given(st.floats(0.0, 0.5))
def test_mc_stderr_nonnegative_and_eta_bounded(eps):
    g = BeamGeometry.from_degrees()
    atoms = sample_atoms(EnsembleSpec(200, 15e-6, (5e-4, 5e-4, 1.5e-4), 1.02e-4), 8)
    eta, se = simulate_readout(atoms, g, 4e-4, 1e-4, 2e-4, eps)
    assert 0 <= eta <= 1 + 1e-12 and se >= 0


def test_retrieval_stats_with_read_weights_normalizes_at_zero_time(small_spec, geom):
    atoms = sample_atoms(small_spec, 13)
    s = imprint(atoms, spinwave_wavevector(geom))
    eta, _ = retrieval_stats(s, atoms.weights)
    assert eta == pytest.approx(1.0, rel=1e-12)
