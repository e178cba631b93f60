"""Rephasing schedules, Delta-t scans and the Delta-t/T versus theta_pi law."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import PulseEvent, retrieval_efficiency_closed_form, simulate_readout
from .ensemble import AtomSample, EnsembleSpec, sample_atoms, thermal_sigma_v
from .geometry import BeamGeometry, raman_wavevector, rephasing_ratio, spinwave_wavevector


class InfeasibleScheduleError(ValueError):
    """The rephasing condition cannot be met inside the storage window."""


@dataclass(frozen=True, eq=False)
class EchoSchedule:
    t1: float
    t2: float
    readout_T: float
    pulses: tuple[PulseEvent, ...] = field(default=())

    def __post_init__(self):
        if not 0 <= self.t1 < self.t2 <= self.readout_T:
            raise ValueError(
                f"schedule needs 0 <= t1 < t2 <= T, got t1={self.t1!r}, t2={self.t2!r}, T={self.readout_T!r}"
            )

    @property
    def dt(self) -> float:
        return self.t2 - self.t1


def minimum_theta_pi(geom: BeamGeometry) -> float:
    """Smallest Raman angle (rad) with Delta t <= T, i.e. |k_pi| >= |k_s| / 2."""
    k_s = np.linalg.norm(spinwave_wavevector(geom))
    k1 = 2 * math.pi / geom.lambda1
    return 2 * math.asin(min(1.0, k_s / (4 * k1)))


def schedule_for(
    geom: BeamGeometry, T: float, epsilon: float = 0.0, t1: Optional[float] = None
) -> EchoSchedule:
    """Pulse pair satisfying 2 k_pi Delta t = k_s T.

    The pair is centred in the storage window unless ``t1`` is given.
    """
    if not T > 0:
        raise ValueError(f"readout time must be > 0, got {T!r}")
    ratio = rephasing_ratio(geom)
    if ratio > 1:
        raise InfeasibleScheduleError(
            f"Delta t / T = {ratio:.4g} > 1; theta_pi must exceed {math.degrees(minimum_theta_pi(geom)):.4g} deg"
        )
    dt = ratio * T
    if t1 is None:
        t1 = (T - dt) / 2
    if t1 < 0 or t1 + dt > T * (1 + 1e-12):
        raise InfeasibleScheduleError(f"t1 = {t1!r} s puts the pulse pair outside [0, T]")
    t2 = min(t1 + dt, T)
    k_pi = raman_wavevector(geom)
    pulses = (PulseEvent(t1, k_pi, epsilon, +1), PulseEvent(t2, k_pi, epsilon, -1))
    return EchoSchedule(t1, t2, T, pulses)


def scan_width(geom: BeamGeometry, spec: EnsembleSpec) -> float:
    """1/e half-width of the efficiency versus Delta t, 1 / (2 |k_pi| sigma_v)."""
    return 1.0 / (2 * np.linalg.norm(raman_wavevector(geom)) * thermal_sigma_v(spec))


def default_dt_range(geom: BeamGeometry, spec: EnsembleSpec, T: float, n_widths: float = 3.0) -> tuple[float, float]:
    center = rephasing_ratio(geom) * T
    half = n_widths * scan_width(geom, spec)
    lo = max(center - half, 1e-3 * T)
    hi = min(center + half, T)
    return lo, hi


@dataclass(frozen=True, eq=False)
class ScanCurve:
    dt: np.ndarray
    eta: np.ndarray
    stderr: np.ndarray
    T: float
    mode: str


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def scan_delta_t(
    geom: BeamGeometry,
    spec: EnsembleSpec,
    T: float,
    dt_range: Optional[tuple[float, float]] = None,
    n_points: int = 61,
    mode: str = "closed_form",
    epsilon: float = 0.0,
    atoms: Optional[AtomSample] = None,
    seed: int = 0,
    mode_exit: bool = False,
    workers: int = 1,
) -> ScanCurve:
    """Readout efficiency at time T as a function of the pulse spacing.

    MC mode uses one atom sample for every point (common random numbers).
    """
    if n_points < 3:
        raise ValueError(f"n_points must be >= 3, got {n_points!r}")
    if dt_range is None:
        dt_range = default_dt_range(geom, spec, T)
    lo, hi = dt_range
    if not 0 < lo < hi <= T:
        raise ValueError(f"dt_range must satisfy 0 < lo < hi <= T, got {dt_range!r} with T={T!r}")
    dts = np.linspace(lo, hi, n_points)

    if mode == "closed_form":
        eta = np.array([retrieval_efficiency_closed_form(geom, spec, T, d, epsilon, mode_exit) for d in dts])
        return ScanCurve(dts, eta, np.zeros_like(eta), T, mode)
    if mode != "mc":
        raise ValueError(f"mode must be 'mc' or 'closed_form', got {mode!r}")
    if atoms is None:
        atoms = sample_atoms(spec, seed, workers=workers)

    def point(d):
        t1 = (T - d) / 2
        return simulate_readout(atoms, geom, T, t1, t1 + d, epsilon, mode_exit, spec.mode_waist)

    out = np.array(_map(point, dts, workers))
    return ScanCurve(dts, out[:, 0], out[:, 1], T, mode)


def locate_peak(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Peak position and 1/e half-width from a parabola through log y.

    Uses the maximum grid point and its two neighbours; exact for a sampled
    Gaussian.  The maximum must not sit on the edge of the grid.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    i = int(np.argmax(y))
    if i == 0 or i == len(y) - 1:
        raise ValueError("peak is not bracketed by the scan range")
    xs, ly = x[i - 1 : i + 2], np.log(y[i - 1 : i + 2])
    a, b, _ = np.polyfit(xs - x[i], ly, 2)
    if a >= 0:
        raise ValueError("log-efficiency is not concave at the maximum")
    center = x[i] - b / (2 * a)
    return float(center), float(math.sqrt(-1.0 / a))


@dataclass(frozen=True)
class RatioPoint:
    theta_pi: float
    ratio: float
    ratio_theory: float
    dt_peak: float


def ratio_vs_angle(
    geom_base: BeamGeometry,
    theta_pi_list: Sequence[float],
    spec: EnsembleSpec,
    T: float = 600e-6,
    mode: str = "closed_form",
    n_points: int = 61,
    seed: int = 0,
    epsilon: float = 0.0,
    workers: int = 1,
) -> list[RatioPoint]:
    """Locate the optimal spacing for each Raman angle and report Delta t*/T.

    ``ratio_theory`` is the small-angle value theta_s / (2 theta_pi).
    """
    atoms = sample_atoms(spec, seed, workers=workers) if mode == "mc" else None
    out = []
    for theta in theta_pi_list:
        if not 0 < theta < math.pi / 2:
            raise ValueError(f"theta_pi must lie in (0, pi/2), got {theta!r}")
        geom = geom_base.replace(theta_pi=theta)
        curve = scan_delta_t(geom, spec, T, n_points=n_points, mode=mode, epsilon=epsilon, atoms=atoms, workers=workers)
        center, _ = locate_peak(curve.dt, curve.eta)
        out.append(RatioPoint(theta, center / T, geom.theta_s / (2 * theta), center))
    return out
