"""Thermal atom cloud: seeded sampling of positions, velocities and mode weights.

Stream-splitting rule: atoms are generated in fixed blocks of ``BLOCK_SIZE``
consecutive indices.  Block ``b`` of stream ``s`` draws from
``PCG64(SeedSequence(seed, spawn_key=(s, b)))``, so the value for a given
atom index depends only on (seed, stream, index) and never on how blocks are
distributed over workers.  Within a block each atom consumes six standard
normals: three position components followed by three velocity components.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .constants import K_B, species_mass

BLOCK_SIZE = 4096


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    n_atoms: int
    temperature: float
    cloud_sigma: tuple[float, float, float]
    mode_waist: float
    atom_mass: float = species_mass("Rb87")

    def __post_init__(self):
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise ValueError(f"n_atoms must be an integer >= 1, got {self.n_atoms!r}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature!r}")
        sigma = tuple(float(s) for s in self.cloud_sigma)
        if len(sigma) != 3 or not all(s > 0 for s in sigma):
            raise ValueError(f"cloud_sigma must be three positive lengths, got {self.cloud_sigma!r}")
        object.__setattr__(self, "cloud_sigma", sigma)
        object.__setattr__(self, "n_atoms", int(self.n_atoms))
        if not self.mode_waist > 0:
            raise ValueError(f"mode_waist must be > 0, got {self.mode_waist!r}")
        if not self.atom_mass > 0:
            raise ValueError(f"atom_mass must be > 0, got {self.atom_mass!r}")

    def replace(self, **changes) -> "EnsembleSpec":
        fields = dict(
            n_atoms=self.n_atoms,
            temperature=self.temperature,
            cloud_sigma=self.cloud_sigma,
            mode_waist=self.mode_waist,
            atom_mass=self.atom_mass,
        )
        fields.update(changes)
        return EnsembleSpec(**fields)


@dataclass(frozen=True, eq=False)
class AtomSample:
    positions: np.ndarray  # (n, 3) m, at t = 0
    velocities: np.ndarray  # (n, 3) m/s
    weights: np.ndarray  # (n,) mode overlap in [0, 1]

    def __len__(self):
        return len(self.weights)

    def positions_at(self, t: float) -> np.ndarray:
        """Ballistic positions r(t) = r(0) + v t."""
        return self.positions + self.velocities * t

    def translated(self, d) -> "AtomSample":
        """Rigid shift of the cloud; the mode weights are kept."""
        return AtomSample(self.positions + np.asarray(d, dtype=float), self.velocities, self.weights)

    def subset(self, index) -> "AtomSample":
        return AtomSample(self.positions[index], self.velocities[index], self.weights[index])


def thermal_sigma_v(spec: EnsembleSpec) -> float:
    """One-dimensional RMS velocity sqrt(k_B T / m)."""
    return math.sqrt(K_B * spec.temperature / spec.atom_mass)


def mean_speed(spec: EnsembleSpec) -> float:
    """Maxwell-Boltzmann mean speed sqrt(8 k_B T / (pi m)); reported alongside sigma_v."""
    return math.sqrt(8 * K_B * spec.temperature / (math.pi * spec.atom_mass))


def mode_weights(positions: np.ndarray, waist: float) -> np.ndarray:
    """Gaussian mode weight exp(-(x^2 + y^2) / w^2); independent of z."""
    rho2 = positions[:, 0] ** 2 + positions[:, 1] ** 2
    return np.exp(-rho2 / waist**2)


def block_generator(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def _draw_block(seed: int, stream: int, block: int, count: int) -> np.ndarray:
    return block_generator(seed, stream, block).standard_normal((count, 6))


def sample_atoms(spec: EnsembleSpec, seed: int, stream: int = 0, workers: int = 1) -> AtomSample:
    """Draw a reproducible cloud realization.

    ``stream`` selects an independent realization for the same seed (used
    for shot averaging).  Output is bit-identical for any ``workers``.
    """
    n = spec.n_atoms
    n_blocks = -(-n // BLOCK_SIZE)
    counts = [min(BLOCK_SIZE, n - b * BLOCK_SIZE) for b in range(n_blocks)]
    jobs = [(seed, stream, b, counts[b]) for b in range(n_blocks)]
    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda a: _draw_block(*a), jobs))
    else:
        blocks = [_draw_block(*a) for a in jobs]
    z = np.concatenate(blocks, axis=0)
    positions = z[:, :3] * np.asarray(spec.cloud_sigma)
    velocities = z[:, 3:] * thermal_sigma_v(spec)
    return AtomSample(positions, velocities, mode_weights(positions, spec.mode_waist))
