"""Run configuration: strict TOML blocks in laboratory units.

Every block is a dataclass whose field names are the accepted keys.  Unknown
keys, wrong types and out-of-range values raise ConfigError naming the key,
before any computation starts.  Units are carried in the key suffix
(_nm, _deg, _uK, _um, _us, _pct, _khz) and converted to SI here.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .constants import C, RB87_D1_WAVELENGTH, RB87_HYPERFINE_SPLITTING, SPECIES_MASS
from .ensemble import EnsembleSpec
from .geometry import BeamGeometry
from .photon_stats import DlczParams, calibrate


class ConfigError(ValueError):
    pass


@dataclass
class GeometryConfig:
    wavelength_nm: float = RB87_D1_WAVELENGTH * 1e9
    ground_splitting_ghz: float = RB87_HYPERFINE_SPLITTING * 1e-9
    lambda1_nm: Optional[float] = None
    lambda2_nm: Optional[float] = None
    lambda_c_nm: Optional[float] = None
    lambda_p_nm: Optional[float] = None
    theta_s_deg: float = 1.1
    theta_pi_deg: float = 2.1
    phi_s_deg: float = 0.0
    dir1: Optional[list[float]] = None
    dir2: Optional[list[float]] = None
    dir_c: Optional[list[float]] = None
    dir_p: Optional[list[float]] = None

    def build(self) -> BeamGeometry:
        nu = C / (self.wavelength_nm * 1e-9)
        lam_ge = C / (nu - self.ground_splitting_ghz * 1e9)

        def pick(value, default):
            return default if value is None else value * 1e-9

        return BeamGeometry(
            lambda1=pick(self.lambda1_nm, self.wavelength_nm * 1e-9),
            lambda2=pick(self.lambda2_nm, lam_ge),
            lambda_c=pick(self.lambda_c_nm, self.wavelength_nm * 1e-9),
            lambda_p=pick(self.lambda_p_nm, lam_ge),
            theta_s=math.radians(self.theta_s_deg),
            theta_pi=math.radians(self.theta_pi_deg),
            phi_s=math.radians(self.phi_s_deg),
            dir1=self.dir1,
            dir2=self.dir2,
            dir_c=self.dir_c,
            dir_p=self.dir_p,
        )


@dataclass
class EnsembleConfig:
    n_atoms: int = 100_000
    temperature_uK: float = 15.0
    cloud_sigma_um: list[float] = field(default_factory=lambda: [500.0, 500.0, 150.0])
    mode_waist_um: float = 102.0
    species: str = "Rb87"

    def build(self) -> EnsembleSpec:
        if self.species not in SPECIES_MASS:
            raise ConfigError(f"ensemble.species: unknown species {self.species!r}; choose from {sorted(SPECIES_MASS)}")
        return EnsembleSpec(
            n_atoms=self.n_atoms,
            temperature=self.temperature_uK * 1e-6,
            cloud_sigma=tuple(s * 1e-6 for s in self.cloud_sigma_um),
            mode_waist=self.mode_waist_um * 1e-6,
            atom_mass=SPECIES_MASS[self.species],
        )


@dataclass
class PulsesConfig:
    epsilon_pct: float = 3.0
    policy: str = "centered"  # or "fixed_t1"
    t1_us: Optional[float] = None

    @property
    def epsilon(self) -> float:
        return self.epsilon_pct / 100

    def t1(self) -> Optional[float]:
        return None if self.policy == "centered" else self.t1_us * 1e-6


@dataclass
class DlczConfig:
    # calibration targets (echo off, T -> 0)
    p_w_pct: float = 0.35
    p_r_pct: float = 0.28
    g2_0: float = 24.3
    dark_fraction: float = 0.1
    p_r_background_pct: Optional[float] = None
    # explicit parameters; when chi is set the calibration is skipped
    chi: Optional[float] = None
    eta_w: Optional[float] = None
    eta_r: Optional[float] = None
    dark_w_pct: float = 0.0
    dark_r_pct: Optional[float] = None
    # pi-pulse noise in the read-out mode, measured at n_pi_epsilon_pct
    n_pi_pct: float = 0.8
    n_pi_epsilon_pct: float = 3.0
    mode_exit: bool = True

    def build(self) -> DlczParams:
        n_pi = self.n_pi_pct / 100
        if self.chi is not None:
            missing = [k for k in ("eta_w", "eta_r", "dark_r_pct") if getattr(self, k) is None]
            if missing:
                raise ConfigError(f"dlcz: explicit chi needs {', '.join('dlcz.' + m for m in missing)}")
            return DlczParams(self.chi, self.eta_w, self.eta_r, self.dark_w_pct / 100, self.dark_r_pct / 100, n_pi)
        bg = None if self.p_r_background_pct is None else self.p_r_background_pct / 100
        return calibrate(self.p_w_pct / 100, self.p_r_pct / 100, self.g2_0, self.dark_fraction, bg, n_pi).params


@dataclass
class RunBlock:
    seed: int = 0
    n_trials: int = 1_000_000
    out_dir: str = "out"
    mode: str = "closed_form"
    workers: int = 1


@dataclass
class RabiConfig:
    freq_khz: float = 87.1
    gamma_khz: float = 13.4
    t_max_us: float = 60.0
    points: int = 121
    noise: float = 0.0
    amplitude: float = -0.5
    offset: float = 0.5


@dataclass
class ScanConfig:
    T_us: float = 600.0
    dt_min_us: Optional[float] = None
    dt_max_us: Optional[float] = None
    points: int = 61
    theta_pi_deg: list[float] = field(default_factory=lambda: [1.5, 1.9, 2.1, 2.5])
    dephase_T_max_us: float = 600.0
    dephase_points: int = 61


@dataclass
class NoiseConfig:
    grid_points: int = 101
    extent_widths: float = 5.0
    n_shots: int = 16
    n_pulses: int = 2
    detection_efficiency: float = 1.0


@dataclass
class G2Config:
    T_min_us: float = 5.0
    T_max_us: float = 2000.0
    points: int = 41
    simulate: bool = False


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    pulses: PulsesConfig = field(default_factory=PulsesConfig)
    dlcz: DlczConfig = field(default_factory=DlczConfig)
    run: RunBlock = field(default_factory=RunBlock)
    rabi: RabiConfig = field(default_factory=RabiConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    g2: G2Config = field(default_factory=G2Config)
    source: Optional[str] = None
    sha256: str = hashlib.sha256(b"").hexdigest()

    def geometry_obj(self) -> BeamGeometry:
        return _wrap("geometry", self.geometry.build)

    def ensemble_spec(self) -> EnsembleSpec:
        return _wrap("ensemble", self.ensemble.build)

    def dlcz_params(self) -> DlczParams:
        return _wrap("dlcz", self.dlcz.build)


_BLOCKS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name not in ("source", "sha256")}


def _wrap(block, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{block}: {exc}") from exc


def _check_type(value: Any, hint: Any, key: str) -> Any:
    origin = get_origin(hint)
    if origin is Union:
        args = [a for a in get_args(hint) if a is not type(None)]
        return _check_type(value, args[0], key)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        (item,) = get_args(hint)
        return [_check_type(v, item, f"{key}[{i}]") for i, v in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{key}: must be finite, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    raise TypeError(f"unsupported config type {hint!r}")


def _build_block(cls, table: dict, name: str):
    hints = get_type_hints(cls)
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {name}.{unknown[0]} (allowed: {', '.join(sorted(allowed))})")
    kwargs = {k: _check_type(v, hints[k], f"{name}.{k}") for k, v in table.items()}
    return cls(**kwargs)


def _positive(cfg: RunConfig, key: str, strict: bool = True):
    block, attr = key.split(".")
    v = getattr(getattr(cfg, block), attr)
    if v is None:
        return
    if (strict and not v > 0) or (not strict and v < 0):
        raise ConfigError(f"{key} must be {'> 0' if strict else '>= 0'}, got {v!r}")


def validate(cfg: RunConfig) -> RunConfig:
    """Range checks and eager construction of the physics objects."""
    for key in (
        "ensemble.n_atoms", "ensemble.temperature_uK", "ensemble.mode_waist_um", "run.n_trials", "run.workers",
        "rabi.freq_khz", "rabi.t_max_us", "rabi.points", "scan.T_us", "scan.points", "scan.dephase_T_max_us",
        "scan.dephase_points", "noise.grid_points", "noise.extent_widths", "noise.n_shots", "noise.n_pulses",
        "g2.T_max_us", "g2.points", "dlcz.n_pi_epsilon_pct",
    ):
        _positive(cfg, key)
    for key in ("rabi.gamma_khz", "rabi.noise", "g2.T_min_us", "dlcz.n_pi_pct", "pulses.epsilon_pct", "run.seed"):
        _positive(cfg, key, strict=False)
    if cfg.run.mode not in ("mc", "closed_form"):
        raise ConfigError(f"run.mode must be 'mc' or 'closed_form', got {cfg.run.mode!r}")
    if cfg.pulses.policy not in ("centered", "fixed_t1"):
        raise ConfigError(f"pulses.policy must be 'centered' or 'fixed_t1', got {cfg.pulses.policy!r}")
    if cfg.pulses.policy == "fixed_t1" and cfg.pulses.t1_us is None:
        raise ConfigError("pulses.t1_us is required when pulses.policy = 'fixed_t1'")
    if cfg.pulses.epsilon_pct > 50:
        raise ConfigError(f"pulses.epsilon_pct must be <= 50, got {cfg.pulses.epsilon_pct!r}")
    if len(cfg.ensemble.cloud_sigma_um) != 3:
        raise ConfigError(f"ensemble.cloud_sigma_um needs three values, got {cfg.ensemble.cloud_sigma_um!r}")
    if not 0 < cfg.noise.detection_efficiency <= 1:
        raise ConfigError(f"noise.detection_efficiency must lie in (0, 1], got {cfg.noise.detection_efficiency!r}")
    if cfg.scan.points < 3 or cfg.g2.points < 2 or cfg.noise.grid_points < 5:
        raise ConfigError("scan.points >= 3, g2.points >= 2 and noise.grid_points >= 5 are required")
    if cfg.g2.T_min_us >= cfg.g2.T_max_us:
        raise ConfigError(f"g2.T_min_us must be < g2.T_max_us, got {cfg.g2.T_min_us!r} >= {cfg.g2.T_max_us!r}")
    if not all(0 < t < 90 for t in cfg.scan.theta_pi_deg):
        raise ConfigError(f"scan.theta_pi_deg entries must lie in (0, 90), got {cfg.scan.theta_pi_deg!r}")
    cfg.geometry_obj()
    cfg.ensemble_spec()
    cfg.dlcz_params()
    return cfg


def from_dict(data: dict, source: Optional[str] = None, sha256: Optional[str] = None) -> RunConfig:
    unknown = sorted(set(data) - set(_BLOCKS))
    if unknown:
        raise ConfigError(f"unknown block [{unknown[0]}] (allowed: {', '.join(sorted(_BLOCKS))})")
    blocks = {}
    for name, f in _BLOCKS.items():
        table = data.get(name, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        blocks[name] = _build_block(f.default_factory().__class__, table, name)
    cfg = RunConfig(**blocks, source=source)
    if sha256 is not None:
        cfg.sha256 = sha256
    return validate(cfg)


def load(path: Union[str, Path, None]) -> RunConfig:
    """Parse and validate a config file; None gives the built-in defaults."""
    if path is None:
        return validate(RunConfig())
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data, source=str(path), sha256=hashlib.sha256(raw).hexdigest())
