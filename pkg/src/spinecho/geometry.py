"""Beam geometry and wavevector arithmetic.

Convention: the coupling/read beam propagates along +z.  The probe (or
write-out) beam is tilted by ``theta_s`` from +z, in the x-z plane unless an
azimuth ``phi_s`` is given.  The two Raman beams are placed symmetrically
about the bisector of the coupling/probe pair, separated by ``theta_pi``, so
that ``k_pi = k2 - k1`` is parallel to ``k_s = k_p - k_c`` whenever the
wavelengths pair up (beam 1 with the coupling light, beam 2 with the probe).
Explicit unit direction vectors override this construction, which is how a
misaligned setup is simulated.

All angles are radians and all wavevectors are 3-vectors in rad/m.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .constants import C, RB87_D1_WAVELENGTH, RB87_HYPERFINE_SPLITTING


class DegenerateGeometryError(ValueError):
    """Raised when a quantity is undefined for the given geometry (e.g. k_pi = 0)."""


def _unit(theta: float, phi: float = 0.0) -> np.ndarray:
    return np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])


def _as_direction(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(3)
    if abs(np.linalg.norm(arr) - 1.0) > 1e-12:
        raise ValueError(f"direction {name} must have unit norm, got |{name}| = {np.linalg.norm(arr)!r}")
    return arr


# eq=False: ndarray fields do not support elementwise ==.
@dataclass(frozen=True, eq=False)
class BeamGeometry:
    lambda1: float
    lambda2: float
    lambda_c: float
    theta_s: float
    theta_pi: float
    lambda_p: Optional[float] = None
    phi_s: float = 0.0
    dir1: Optional[np.ndarray] = None
    dir2: Optional[np.ndarray] = None
    dir_c: Optional[np.ndarray] = None
    dir_p: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if self.lambda_p is not None and not self.lambda_p > 0:
            raise ValueError(f"lambda_p must be > 0, got {self.lambda_p!r}")
        for name in ("theta_s", "theta_pi"):
            value = getattr(self, name)
            if not 0.0 <= value < math.pi / 2:
                raise ValueError(f"{name} must lie in [0, pi/2), got {value!r}")
        for name in ("dir1", "dir2", "dir_c", "dir_p"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _as_direction(value, name))

    @classmethod
    def from_degrees(
        cls,
        theta_s_deg: float = 1.1,
        theta_pi_deg: float = 2.1,
        wavelength: float = RB87_D1_WAVELENGTH,
        ground_splitting: float = RB87_HYPERFINE_SPLITTING,
        **kwargs,
    ) -> "BeamGeometry":
        """Geometry for one optical line.

        Beam 1 and the coupling light drive |s>-|e>; beam 2 and the probe
        drive |g>-|e>, which sits ``ground_splitting`` (Hz) lower in
        frequency.  Pass ``ground_splitting=0`` for degenerate wavelengths.
        """
        lam_ge = C / (C / wavelength - ground_splitting)
        return cls(
            lambda1=wavelength,
            lambda2=lam_ge,
            lambda_c=wavelength,
            lambda_p=lam_ge,
            theta_s=math.radians(theta_s_deg),
            theta_pi=math.radians(theta_pi_deg),
            **kwargs,
        )

    def replace(self, **changes) -> "BeamGeometry":
        return dataclasses.replace(self, **changes)

    @property
    def probe_wavelength(self) -> float:
        return self.lambda2 if self.lambda_p is None else self.lambda_p

    def directions(self) -> dict[str, np.ndarray]:
        """Unit propagation directions of the coupling, probe and both Raman beams."""
        bisector = self.theta_s / 2
        return {
            "c": self.dir_c if self.dir_c is not None else _unit(0.0),
            "p": self.dir_p if self.dir_p is not None else _unit(self.theta_s, self.phi_s),
            "1": self.dir1 if self.dir1 is not None else _unit(bisector - self.theta_pi / 2),
            "2": self.dir2 if self.dir2 is not None else _unit(bisector + self.theta_pi / 2),
        }

    def wavevectors(self) -> dict[str, np.ndarray]:
        d = self.directions()
        return {
            "c": 2 * math.pi / self.lambda_c * d["c"],
            "p": 2 * math.pi / self.probe_wavelength * d["p"],
            "1": 2 * math.pi / self.lambda1 * d["1"],
            "2": 2 * math.pi / self.lambda2 * d["2"],
        }


def wavenumber(wavelength: float) -> float:
    return 2 * math.pi / wavelength


def spinwave_wavevector(geom: BeamGeometry) -> np.ndarray:
    """k_s = k_p - k_c, exact vector difference."""
    k = geom.wavevectors()
    return k["p"] - k["c"]


def raman_wavevector(geom: BeamGeometry) -> np.ndarray:
    """k_pi = k2 - k1, exact vector difference (|k1| != |k2| is kept)."""
    k = geom.wavevectors()
    return k["2"] - k["1"]


def spinwave_wavenumber_small_angle(geom: BeamGeometry) -> float:
    """k_c * theta_s, for reporting only."""
    return wavenumber(geom.lambda_c) * geom.theta_s


def raman_wavenumber_small_angle(geom: BeamGeometry) -> float:
    """k_1 * theta_pi, for reporting only."""
    return wavenumber(geom.lambda1) * geom.theta_pi


def rephasing_ratio(geom: BeamGeometry) -> float:
    """Delta t / T = |k_s| / (2 |k_pi|) from exact magnitudes."""
    k_pi = np.linalg.norm(raman_wavevector(geom))
    if k_pi == 0.0:
        raise DegenerateGeometryError("rephasing ratio undefined: |k_pi| = 0 (theta_pi = 0 with equal wavelengths)")
    return float(np.linalg.norm(spinwave_wavevector(geom)) / (2 * k_pi))


def rephasing_ratio_small_angle(geom: BeamGeometry) -> float:
    if geom.theta_pi == 0.0:
        raise DegenerateGeometryError("theta_pi = 0")
    return geom.theta_s / (2 * geom.theta_pi)
