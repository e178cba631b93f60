"""Read-out noise from imperfect pi pulses.

Each pulse leaves a fraction epsilon of the population behind.  The left-over
population carries the Raman grating k_pi, so the read beam (wavevector k_c)
scatters it preferentially into k_c + k_pi.  Atom j contributes a field
amplitude A_j = sqrt(residual) * u_j^2, where u_j is the Gaussian mode weight
and the square is the product of the write- and read-mode weights.

Detection directions are parametrized by direction cosines (theta_x,
theta_y), i.e. k_det = k (theta_x, theta_y, 1 - (theta_x^2 + theta_y^2) / 2)
to fourth order.  The phase Delta k . r_j then separates into a theta_x part
and a theta_y part, and the whole map is one matrix product.

A map is the expected number of photons per shot per grid cell:

    I(theta) = |sum_j A_j exp(i Delta k(theta) . r_j)|^2 dOmega / (4 pi),

averaged over independent cloud realizations (shots).  Far from phase
matching this averages to the incoherent floor sum_j |A_j|^2 dOmega / 4 pi,
i.e. 2 epsilon N dOmega / 4 pi.  At phase matching it is larger by the
effective atom number (sum A)^2 / sum A^2.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .ensemble import AtomSample, EnsembleSpec, sample_atoms
from .fitting import fit_gaussian_peak
from .geometry import BeamGeometry, raman_wavevector

# atoms whose amplitude is below this fraction of the maximum are skipped
_AMPLITUDE_CUTOFF = 1e-4


def incoherent_noise_floor(epsilon: float, n_atoms: float, solid_angle: float) -> float:
    """2 epsilon N dOmega / (4 pi) photons per shot."""
    if not 0 <= epsilon < 1:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon!r}")
    if not n_atoms >= 1:
        raise ValueError(f"n_atoms must be >= 1, got {n_atoms!r}")
    if not 0 < solid_angle <= 4 * math.pi:
        raise ValueError(f"solid_angle must lie in (0, 4 pi], got {solid_angle!r}")
    return 2 * epsilon * n_atoms * solid_angle / (4 * math.pi)


def pulse_residual(epsilon: float, n_pulses: int = 2) -> float:
    """Population left behind after n pulses, 1 - (1 - epsilon)^n (about n epsilon)."""
    return 1.0 - (1.0 - epsilon) ** n_pulses


def scale_noise_probability(p_ref: float, epsilon_ref: float, epsilon: float, n_pulses: int = 2) -> float:
    """Noise probability at a new pulse error, from a measured reference point.

    The calibration constant p_ref / residual(epsilon_ref) absorbs detection
    efficiency and mode overlap; the noise is linear in the residual.
    """
    if epsilon_ref <= 0:
        raise ValueError("reference epsilon must be > 0")
    return p_ref * pulse_residual(epsilon, n_pulses) / pulse_residual(epsilon_ref, n_pulses)


@dataclass(frozen=True, eq=False)
class DetectionMode:
    """Single-mode detector: acceptance exp(-|theta - theta_d|^2 / theta_a^2), pi theta_a^2 = solid_angle."""

    direction: np.ndarray
    solid_angle: float
    wavelength: float
    efficiency: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(d) - 1) > 1e-12:
            raise ValueError("detection direction must be a unit vector")
        object.__setattr__(self, "direction", d)
        if not self.solid_angle > 0:
            raise ValueError(f"solid_angle must be > 0, got {self.solid_angle!r}")
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"efficiency must lie in (0, 1], got {self.efficiency!r}")

    @classmethod
    def from_waist(cls, direction, waist: float, wavelength: float, efficiency: float = 1.0) -> "DetectionMode":
        """Gaussian fibre mode of waist w at the ensemble.

        Plane-wave coupling falls as exp(-2 delta^2 / theta0^2) with
        theta0 = lambda / (pi w), so solid_angle = pi theta0^2 / 2.
        """
        theta0 = wavelength / (math.pi * waist)
        return cls(direction, math.pi * theta0**2 / 2, wavelength, efficiency)

    @property
    def acceptance_angle(self) -> float:
        return math.sqrt(self.solid_angle / math.pi)

    @property
    def angles(self) -> np.ndarray:
        return self.direction[:2].copy()


def readout_mode(geom: BeamGeometry, waist: float, efficiency: float = 1.0) -> DetectionMode:
    """Detection mode along the probe / read-out direction."""
    return DetectionMode.from_waist(geom.directions()["p"], waist, geom.probe_wavelength, efficiency)


def noise_grating(geom: BeamGeometry) -> tuple[np.ndarray, float]:
    """Phase-matched output wavevector k_c + k_pi and the detected wavenumber."""
    k = geom.wavevectors()
    return k["c"] + raman_wavevector(geom), 2 * math.pi / geom.probe_wavelength


def lobe_center(geom: BeamGeometry) -> np.ndarray:
    """Direction cosines (theta_x, theta_y) of the phase-matched noise direction."""
    k0, kd = noise_grating(geom)
    return k0[:2] / kd


def lobe_full_width(wavelength: float, waist: float) -> float:
    """Full 1/e angular width 2 lambda / (pi w) of a Gaussian-mode lobe."""
    return 2 * wavelength / (math.pi * waist)


@dataclass(frozen=True, eq=False)
class NoiseGrid:
    theta_x: np.ndarray
    theta_y: np.ndarray

    def __post_init__(self):
        for name in ("theta_x", "theta_y"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim != 1 or len(a) < 2 or np.any(np.diff(a) <= 0):
                raise ValueError(f"{name} must be a strictly increasing 1-D grid")
            object.__setattr__(self, name, a)

    @property
    def cell_solid_angle(self) -> float:
        return float((self.theta_x[1] - self.theta_x[0]) * (self.theta_y[1] - self.theta_y[0]))


def default_grid(geom: BeamGeometry, waist: float, n: int = 101, extent: float = 5.0, center=None) -> NoiseGrid:
    """n x n grid over +/- extent lobe widths around the phase-matched direction."""
    c = lobe_center(geom) if center is None else np.asarray(center, dtype=float)
    half = extent * lobe_full_width(geom.probe_wavelength, waist)
    offs = np.linspace(-half, half, n)
    return NoiseGrid(c[0] + offs, c[1] + offs)


@dataclass(frozen=True, eq=False)
class NoiseMap:
    theta_x: np.ndarray
    theta_y: np.ndarray
    intensity: np.ndarray  # (nx, ny) photons per shot per cell
    cell_solid_angle: float
    floor: float  # incoherent level, photons per shot per cell
    n_mode: float  # sum of (residual-free) squared amplitudes, sum u^4
    n_eff: float  # (sum u^2)^2 / sum u^4
    expected_center: np.ndarray
    n_shots: int = 1
    flags: list[str] = field(default_factory=list)

    @property
    def floor_density(self) -> float:
        """Incoherent photons per shot per steradian."""
        return self.floor / self.cell_solid_angle

    def peak_index(self) -> tuple[int, int]:
        i, j = np.unravel_index(int(np.argmax(self.intensity)), self.intensity.shape)
        return int(i), int(j)

    def peak_angle(self) -> tuple[float, float]:
        i, j = self.peak_index()
        return float(self.theta_x[i]), float(self.theta_y[j])

    def peak_to_floor(self) -> float:
        return float(self.intensity.max() / self.floor) if self.floor > 0 else float("nan")


def _shot_amplitudes(atoms: AtomSample, residual: float):
    a = math.sqrt(residual) * atoms.weights**2
    keep = a > _AMPLITUDE_CUTOFF * a.max() if a.max() > 0 else np.zeros(len(a), bool)
    return a[keep], atoms.positions[keep]


def _shot_map(atoms: AtomSample, k0: np.ndarray, kd: float, grid: NoiseGrid, residual: float):
    u2 = atoms.weights**2
    n_mode = float((u2**2).sum())
    n_eff = float(u2.sum() ** 2 / n_mode) if n_mode > 0 else 0.0
    a, r = _shot_amplitudes(atoms, residual)
    if len(a) == 0 or residual == 0:
        return np.zeros((len(grid.theta_x), len(grid.theta_y))), 0.0, n_mode, n_eff
    x, y, z = r[:, 0], r[:, 1], r[:, 2]
    tx, ty = grid.theta_x, grid.theta_y
    ex = np.exp(1j * (np.outer(k0[0] - kd * tx, x) + np.outer(0.5 * kd * tx**2, z)))
    ey = np.exp(1j * (np.outer(k0[1] - kd * ty, y) + np.outer(0.5 * kd * ty**2, z)))
    amp = a * np.exp(1j * (k0[2] - kd) * z)
    field_ = ex @ (amp * ey).T
    intensity = np.abs(field_) ** 2
    return intensity, residual * n_mode, n_mode, n_eff


def directional_noise_map(
    atoms: Union[AtomSample, Sequence[AtomSample]],
    geom: BeamGeometry,
    epsilon: float,
    grid: Optional[NoiseGrid] = None,
    n_pulses: int = 2,
    waist: Optional[float] = None,
    workers: int = 1,
) -> NoiseMap:
    """Expected noise photons per shot per cell, averaged over the given shots.

    ``waist`` only sizes the default grid; the lobe itself comes from the
    sample's mode weights.
    """
    shots = [atoms] if isinstance(atoms, AtomSample) else list(atoms)
    if not shots:
        raise ValueError("need at least one atom sample")
    if grid is None:
        if waist is None:
            raise ValueError("pass a grid or the mode waist used to size one")
        grid = default_grid(geom, waist)
    residual = pulse_residual(epsilon, n_pulses)
    k0, kd = noise_grating(geom)

    def one(s):
        return _shot_map(s, k0, kd, grid, residual)

    if workers > 1 and len(shots) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, shots))
    else:
        results = [one(s) for s in shots]
    # shot order is fixed, so the sum is reproducible for any worker count
    dom = grid.cell_solid_angle / (4 * math.pi)
    intensity = sum(r[0] for r in results) / len(results) * dom
    floor = sum(r[1] for r in results) / len(results) * dom
    n_mode = sum(r[2] for r in results) / len(results)
    n_eff = sum(r[3] for r in results) / len(results)
    center = lobe_center(geom)
    flags = []
    if not (grid.theta_x[0] < center[0] < grid.theta_x[-1] and grid.theta_y[0] < center[1] < grid.theta_y[-1]):
        flags.append("lobe_outside_grid")
    return NoiseMap(grid.theta_x, grid.theta_y, intensity, grid.cell_solid_angle, floor, n_mode, n_eff, center, len(shots), flags)


def sample_noise_map(
    spec: EnsembleSpec,
    geom: BeamGeometry,
    epsilon: float,
    seed: int,
    n_shots: int = 16,
    grid: Optional[NoiseGrid] = None,
    n_pulses: int = 2,
    workers: int = 1,
) -> NoiseMap:
    """Shot-averaged map; shot s uses atom stream 1000 + s of ``seed``."""
    shots = [sample_atoms(spec, seed, stream=1000 + s) for s in range(n_shots)]
    return directional_noise_map(shots, geom, epsilon, grid, n_pulses, spec.mode_waist, workers)


def lobe_widths(noise_map: NoiseMap) -> dict[str, float]:
    """Full 1/e widths from Gaussian fits to the cuts through the maximum."""
    i, j = noise_map.peak_index()
    fx = fit_gaussian_peak(np.column_stack([noise_map.theta_x, noise_map.intensity[:, j]]))
    fy = fit_gaussian_peak(np.column_stack([noise_map.theta_y, noise_map.intensity[i, :]]))
    return {
        "width_x": 2 * fx.parameters["width"],
        "width_y": 2 * fy.parameters["width"],
        "center_x": fx.parameters["center"],
        "center_y": fy.parameters["center"],
        "converged": fx.converged and fy.converged,
    }


def far_field_floor(noise_map: NoiseMap, exclusion: float) -> float:
    """Mean map level farther than ``exclusion`` (rad) from the expected lobe center."""
    tx, ty = np.meshgrid(noise_map.theta_x, noise_map.theta_y, indexing="ij")
    c = noise_map.expected_center
    far = np.hypot(tx - c[0], ty - c[1]) > exclusion
    if not far.any():
        raise ValueError("no grid cells beyond the exclusion radius")
    return float(noise_map.intensity[far].mean())


def noise_into_mode(noise_map: NoiseMap, detection: DetectionMode) -> float:
    """Integrate the map against the detection acceptance, times its efficiency."""
    tx, ty = np.meshgrid(noise_map.theta_x, noise_map.theta_y, indexing="ij")
    d = detection.angles
    acc = np.exp(-((tx - d[0]) ** 2 + (ty - d[1]) ** 2) / detection.acceptance_angle**2)
    return float(detection.efficiency * (noise_map.intensity * acc).sum())


def mode_atom_numbers(spec: EnsembleSpec) -> tuple[float, float]:
    """(n_mode, n_eff) = (E sum u^4, (E sum u^2)^2 / E sum u^4) for the Gaussian cloud."""
    w2 = spec.mode_waist**2
    s_u2 = spec.n_atoms
    s_u4 = spec.n_atoms
    for s in spec.cloud_sigma[:2]:
        s_u2 /= math.sqrt(1 + 4 * s**2 / w2)
        s_u4 /= math.sqrt(1 + 8 * s**2 / w2)
    return s_u4, s_u2**2 / s_u4


def noise_into_mode_closed_form(
    epsilon: float,
    n_mode: float,
    n_eff: float,
    geom: BeamGeometry,
    detection: DetectionMode,
    waist: float,
    n_pulses: int = 2,
) -> float:
    """Floor plus collective lobe, both folded with the detection acceptance.

    photons = eff * residual * n_mode * dOmega / (4 pi)
              * (1 + n_eff * thL^2 / (thL^2 + tha^2) * exp(-delta^2 / (thL^2 + tha^2)))

    with thL = lambda / (pi w) the lobe's 1/e half-width and delta the angle
    between the lobe center and the detection direction.  Longitudinal
    (Bragg) mismatch is neglected, so this is the thin-sample value.
    """
    residual = pulse_residual(epsilon, n_pulses)
    th_l2 = (geom.probe_wavelength / (math.pi * waist)) ** 2
    th_a2 = detection.acceptance_angle**2
    delta2 = float(np.sum((lobe_center(geom) - detection.angles) ** 2))
    overlap = th_l2 / (th_l2 + th_a2) * math.exp(-delta2 / (th_l2 + th_a2))
    floor = residual * n_mode * detection.solid_angle / (4 * math.pi)
    return detection.efficiency * floor * (1 + n_eff * overlap)
