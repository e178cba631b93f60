"""Phase-grating spin wave: imprinting, ballistic dephasing, pi pulses, retrieval.

Bookkeeping.  ``phases`` holds the lab-frame phase of each term of the
stored state (k_s . r_j(0) at imprint, plus the -/+ 2 k_pi . r_j(t) kicks of
the pi pulses).  ``reference`` holds k_s . r_j(t_now), the phase a
phase-matched readout at the current time projects onto.  The mismatch
``reference - phases`` starts at zero and advances by k_s . v_j dt during
free evolution, so after a pulse pair at t1, t2 and readout at T it equals

    (k_s T - 2 k_pi (t2 - t1)) . v_j.

An odd number of pulses leaves a 2 k_pi . r_j(t1) position grating in the
mismatch, which kills readout into the original mode.

Pulse imperfection: each pulse leaves a fraction ``epsilon`` of the
remaining population behind.  That population is dropped from the coherent
sum (the noise model picks it up).  ``survival`` is the per-atom population
still in the signal pattern, so the coherent amplitude is sqrt(survival) and
two pulses scale the retrieval efficiency by (1 - epsilon)^2.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ensemble import AtomSample, EnsembleSpec, mode_weights, thermal_sigma_v
from .geometry import BeamGeometry, raman_wavevector, spinwave_wavevector

# pulse.time must match state.t_now to this relative precision
_TIME_RTOL = 1e-12


class SequencingError(ValueError):
    """Pulse applied at a time other than the state's current time."""


@dataclass(frozen=True, eq=False)
class SpinWaveState:
    phases: np.ndarray
    reference: np.ndarray
    weights: np.ndarray
    residual: np.ndarray
    k_s: np.ndarray
    t_now: float = 0.0
    flipped: bool = False
    n_pulses: int = 0

    @property
    def mismatch(self) -> np.ndarray:
        return self.reference - self.phases

    @property
    def survival(self) -> np.ndarray:
        return 1.0 - self.residual

    def replace(self, **changes) -> "SpinWaveState":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class PulseEvent:
    time: float
    k_pi: np.ndarray
    epsilon: float = 0.0
    sign: int = 1  # +1 for g...s_j...g -> flipped, -1 for the way back

    def __post_init__(self):
        if self.time < 0:
            raise ValueError(f"pulse time must be >= 0, got {self.time!r}")
        if not 0.0 <= self.epsilon <= 0.5:
            raise ValueError(f"epsilon must lie in [0, 0.5], got {self.epsilon!r}")
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign!r}")


def imprint(atoms: AtomSample, k_s) -> SpinWaveState:
    if len(atoms) == 0:
        raise ValueError("cannot imprint a spin wave on an empty sample")
    k_s = np.asarray(k_s, dtype=float)
    phase0 = atoms.positions @ k_s
    n = len(atoms)
    return SpinWaveState(
        phases=phase0,
        reference=phase0.copy(),
        weights=atoms.weights,
        residual=np.zeros(n),
        k_s=k_s,
    )


def free_evolve(state: SpinWaveState, atoms: AtomSample, dt: float) -> SpinWaveState:
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt!r}")
    if dt == 0:
        return state
    return state.replace(
        reference=state.reference + (atoms.velocities @ state.k_s) * dt,
        t_now=state.t_now + dt,
    )


def apply_pi_pulse(state: SpinWaveState, atoms: AtomSample, pulse: PulseEvent) -> SpinWaveState:
    tol = _TIME_RTOL * max(abs(pulse.time), abs(state.t_now), 1e-6)
    if abs(pulse.time - state.t_now) > tol:
        raise SequencingError(
            f"pulse at t = {pulse.time!r} s but state is at t = {state.t_now!r} s; evolve to the pulse time first"
        )
    expected = -1 if state.flipped else 1
    if pulse.sign != expected:
        raise SequencingError(f"pulse sign {pulse.sign:+d} does not match the current pattern (expected {expected:+d})")
    kick = -2.0 * pulse.sign * (atoms.positions_at(pulse.time) @ np.asarray(pulse.k_pi, dtype=float))
    residual = state.residual + (1.0 - state.residual) * pulse.epsilon
    return state.replace(
        phases=state.phases + kick,
        residual=residual,
        flipped=not state.flipped,
        n_pulses=state.n_pulses + 1,
    )


def retrieval_stats(state: SpinWaveState, read_weights: Optional[np.ndarray] = None) -> tuple[float, float]:
    """Retrieval efficiency and its Monte Carlo standard error.

    eta = |sum_j W_j a_j exp(i dphi_j)|^2 / (sum_j W_j)^2 with W_j the mode
    weights.  If ``read_weights`` (read-mode weights at the readout positions)
    are given, W_j = w_j * read_j and the normalization is (sum_j w_j^2)^2,
    i.e. the value at zero storage time.

    The standard error linearizes the ratio estimator S = sum X_j / sum Y_j
    (X_j = W_j a_j exp(i dphi_j), Y_j the normalization weights) and takes the
    root-mean-square error of |S|^2 for complex-Gaussian fluctuations of S:
    sqrt(4 |S|^2 var_par + 2 var_tot^2).
    """
    w = state.weights
    if read_weights is None:
        big_w, y = w, w
    else:
        big_w, y = w * read_weights, w * w
    z = np.sqrt(state.survival) * np.exp(1j * state.mismatch)
    x = big_w * z
    norm = y.sum()
    s = x.sum() / norm
    eta = float(abs(s) ** 2)
    e = (x - s * y) / norm
    var_tot = float((np.abs(e) ** 2).sum())
    u = s / abs(s) if abs(s) > 0 else 1.0
    var_par = float(((e * np.conj(u)).real ** 2).sum())
    stderr = math.sqrt(4 * eta * var_par + 2 * var_tot**2)
    return eta, stderr


def retrieval_efficiency_mc(state: SpinWaveState, read_weights: Optional[np.ndarray] = None) -> float:
    return retrieval_stats(state, read_weights)[0]


def residual_phase_coefficient(geom: BeamGeometry, T: float, dt: float = 0.0) -> np.ndarray:
    """c = k_s T - 2 k_pi dt; the mismatch phase of atom j is c . v_j."""
    return spinwave_wavevector(geom) * T - 2.0 * raman_wavevector(geom) * dt


def _mode_exit_amplitude(T: float, c: float, s: float, sigma_v: float, waist: float) -> float:
    """E[u(x0) u(x0 + vT) exp(-i c v)] / E[u(x0)^2] along one transverse axis.

    x0 ~ N(0, s^2), v ~ N(0, sigma_v^2), u(x) = exp(-x^2 / w^2).  Gaussian
    integral E[exp(-z^T M z / 2 + i b.z)] = exp(-b^T A^-1 b / 2) / sqrt(det(Sigma) det(A)),
    with A = Sigma^-1 + M.
    """
    m = (2.0 / waist**2) * np.array([[2.0, T], [T, T * T]])
    a = np.diag([1.0 / s**2, 1.0 / sigma_v**2]) + m
    b = np.array([0.0, -c])
    num = math.exp(-0.5 * b @ np.linalg.solve(a, b)) / math.sqrt(s**2 * sigma_v**2 * np.linalg.det(a))
    den = 1.0 / math.sqrt(1.0 + 4.0 * s**2 / waist**2)
    return num / den


def retrieval_efficiency_closed_form(
    geom: BeamGeometry,
    spec: EnsembleSpec,
    T: float,
    dt: Optional[float] = None,
    epsilon: float = 0.0,
    mode_exit: bool = False,
) -> float:
    """Ensemble-averaged retrieval efficiency for Gaussian velocities.

    With ``dt`` None no pulses are applied: eta = exp(-(|k_s| sigma_v T)^2).
    Otherwise a pulse pair separated by ``dt`` is applied and
    eta = exp(-|c|^2 sigma_v^2) (1 - epsilon)^2.  ``mode_exit`` replaces the
    transverse factors with the write/read mode-overlap integral.
    """
    sigma_v = thermal_sigma_v(spec)
    c = residual_phase_coefficient(geom, T, 0.0 if dt is None else dt)
    survival = 1.0 if dt is None else (1.0 - epsilon) ** 2
    if not mode_exit:
        return float(math.exp(-(c @ c) * sigma_v**2) * survival)
    amp = 1.0
    for axis in (0, 1):
        amp *= _mode_exit_amplitude(T, c[axis], spec.cloud_sigma[axis], sigma_v, spec.mode_waist)
    amp *= math.exp(-0.5 * (c[2] * sigma_v) ** 2)
    return float(amp**2 * survival)


def storage_time(geom: BeamGeometry, spec: EnsembleSpec) -> float:
    """1/e time of the un-echoed efficiency, 1 / (|k_s| sigma_v)."""
    return 1.0 / (np.linalg.norm(spinwave_wavevector(geom)) * thermal_sigma_v(spec))


def simulate_readout(
    atoms: AtomSample,
    geom: BeamGeometry,
    T: float,
    t1: Optional[float] = None,
    t2: Optional[float] = None,
    epsilon: float = 0.0,
    mode_exit: bool = False,
    mode_waist: Optional[float] = None,
) -> tuple[float, float]:
    """Imprint, evolve (with an optional pulse pair at t1 < t2) and read out at T.

    Returns (eta, stderr) from :func:`retrieval_stats`.
    """
    k_s = spinwave_wavevector(geom)
    k_pi = raman_wavevector(geom)
    state = imprint(atoms, k_s)
    if t1 is not None:
        if t2 is None or not 0 <= t1 <= t2 <= T:
            raise ValueError(f"need 0 <= t1 <= t2 <= T, got t1={t1!r}, t2={t2!r}, T={T!r}")
        state = free_evolve(state, atoms, t1)
        state = apply_pi_pulse(state, atoms, PulseEvent(t1, k_pi, epsilon, +1))
        state = free_evolve(state, atoms, t2 - t1)
        state = apply_pi_pulse(state, atoms, PulseEvent(t2, k_pi, epsilon, -1))
        state = free_evolve(state, atoms, T - t2)
    else:
        state = free_evolve(state, atoms, T)
    read = None
    if mode_exit:
        if mode_waist is None:
            raise ValueError("mode_exit needs mode_waist")
        read = mode_weights(atoms.positions_at(T), mode_waist)
    return retrieval_stats(state, read)
