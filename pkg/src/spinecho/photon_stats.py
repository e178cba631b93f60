"""DLCZ write/read click model, g2 estimators and count simulation.

Per trial the write pulse creates a spin-wave excitation with probability
chi, heralded with efficiency eta_w; dark_w adds false heralds.  Given a
real herald, the read channel clicks with probability q = eta_r * eta_deph
from the stored excitation, plus the unconditional read probability p_r
(multi-excitation and background, leading order).  False heralds see only
p_r.  Hence

    p_w  = chi eta_w + dark_w
    p_r  = chi q + dark_r + n_pi            (n_pi only with echo pulses on)
    p_wr = chi eta_w (q + p_r) + dark_w p_r
    g2   = 1 + chi eta_w q / (p_w p_r)  >= 1.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .dynamics import retrieval_efficiency_closed_form, simulate_readout
from .ensemble import AtomSample, EnsembleSpec, block_generator, sample_atoms
from .geometry import BeamGeometry
from .scheduler import InfeasibleScheduleError, schedule_for

TRIAL_BLOCK = 1 << 16
_COUNT_STREAM = 7


class UndefinedEstimateError(ZeroDivisionError):
    """g2 requested with a zero single-channel probability or count."""


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class DlczParams:
    chi: float
    eta_w: float
    eta_r: float
    dark_w: float = 0.0
    dark_r: float = 0.0
    n_pi: float = 0.0

    def __post_init__(self):
        for name in ("chi", "eta_w", "eta_r", "dark_w", "dark_r", "n_pi"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ParameterError(f"{name} must lie in [0, 1), got {v!r}")
        if self.chi * self.eta_r + self.dark_r + self.n_pi >= 1:
            raise ParameterError("chi * eta_r + dark_r + n_pi must be < 1")

    def replace(self, **changes) -> "DlczParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class CorrelationPoint:
    T: float
    p_w: float
    p_r: float
    p_wr: float
    g2: float
    stderr_g2: float = 0.0
    echo_on: bool = False
    flags: tuple[str, ...] = ()


def g2_estimate(p_w: float, p_r: float, p_wr: float) -> float:
    """g2 = p_wr / (p_w p_r)."""
    if p_w <= 0 or p_r <= 0:
        raise UndefinedEstimateError(f"g2 undefined for p_w={p_w!r}, p_r={p_r!r}")
    # sequential division avoids underflow of p_w * p_r
    return p_wr / p_w / p_r


def g2_from_counts(n_w: int, n_r: int, n_wr: int, n_trials: int) -> tuple[float, float]:
    """g2 = N n_wr / (n_w n_r) and its delta-method standard error.

    The four outcome cells (wr, w only, r only, neither) are multinomial;
    var(log g2) = sum_i n_i (d log g2 / d n_i)^2.
    """
    if n_w <= 0 or n_r <= 0:
        raise UndefinedEstimateError(f"g2 undefined for n_w={n_w!r}, n_r={n_r!r}")
    g2 = n_trials * n_wr / (n_w * n_r)
    if n_wr == 0:
        return 0.0, float("nan")
    n = n_trials
    cells = np.array([n_wr, n_w - n_wr, n_r - n_wr, n - n_w - n_r + n_wr], dtype=float)
    grads = np.array(
        [
            1 / n_wr - 1 / n_w - 1 / n_r + 1 / n,
            -1 / n_w + 1 / n,
            -1 / n_r + 1 / n,
            1 / n,
        ]
    )
    var_log = float(np.sum(cells * grads**2))
    return g2, g2 * math.sqrt(max(var_log, 0.0))


def expected_stderr(p_w: float, p_r: float, p_wr: float, n_trials: int) -> float:
    """Standard error of the count estimator at the expected counts."""
    return g2_from_counts(p_w * n_trials, p_r * n_trials, p_wr * n_trials, n_trials)[1]


def model_probabilities(params: DlczParams, eta_deph: float, echo_on: bool) -> tuple[float, float, float]:
    """(p_w, p_r, p_wr) per trial.

    The leading-order structure stops being a probability model when
    chi * eta_w approaches 1 (p_wr would exceed p_w or p_r); such inputs
    raise ParameterError.
    """
    if not 0 <= eta_deph <= 1:
        raise ParameterError(f"eta_deph must lie in [0, 1], got {eta_deph!r}")
    q = params.eta_r * eta_deph
    herald = params.chi * params.eta_w
    p_w = herald + params.dark_w
    p_r = params.chi * q + params.dark_r + (params.n_pi if echo_on else 0.0)
    p_wr = herald * (q + p_r) + params.dark_w * p_r
    if p_w > 1 or p_r > 1 or p_wr > min(p_w, p_r):
        raise ParameterError(f"probabilities out of range: p_w={p_w!r}, p_r={p_r!r}, p_wr={p_wr!r}")
    return p_w, p_r, p_wr


def model_g2(params: DlczParams, eta_deph: float, echo_on: bool) -> float:
    """Closed form 1 + chi eta_w q / (p_w p_r), independent of the probability route."""
    q = params.eta_r * eta_deph
    p_w = params.chi * params.eta_w + params.dark_w
    p_r = params.chi * q + params.dark_r + (params.n_pi if echo_on else 0.0)
    if p_w <= 0 or p_r <= 0:
        raise UndefinedEstimateError(f"g2 undefined for p_w={p_w!r}, p_r={p_r!r}")
    return 1.0 + (params.chi * params.eta_w / p_w) * (q / p_r)


@dataclass(frozen=True)
class Calibration:
    params: DlczParams
    dark_fraction: float
    targets: tuple[float, float, float]


def calibrate(
    p_w: float,
    p_r: float,
    g2: float,
    dark_fraction: float = 0.1,
    p_r_background: Optional[float] = None,
    n_pi: float = 0.0,
) -> Calibration:
    """Solve the echo-off T -> 0 model for measured (p_w, p_r, g2).

    dark_w is folded into p_w (dark_w = 0, chi eta_w = p_w).  dark_r is the
    measured background ``p_r_background`` if given, else dark_fraction * p_r.
    Then g2 - 1 = eta_r / p_r gives eta_r, and p_r = chi eta_r + dark_r gives
    chi; eta_w = p_w / chi.
    """
    if not (0 < p_w < 1 and 0 < p_r < 1 and g2 > 1):
        raise ParameterError(f"need 0 < p_w, p_r < 1 and g2 > 1, got {(p_w, p_r, g2)!r}")
    dark_r = p_r_background if p_r_background is not None else dark_fraction * p_r
    if not 0 <= dark_r < p_r:
        raise ParameterError(f"background {dark_r!r} must lie in [0, p_r)")
    eta_r = (g2 - 1) * p_r
    chi = (p_r - dark_r) / eta_r
    eta_w = p_w / chi
    params = DlczParams(chi=chi, eta_w=eta_w, eta_r=eta_r, dark_w=0.0, dark_r=dark_r, n_pi=n_pi)
    return Calibration(params, dark_r / p_r, (p_w, p_r, g2))


def simulate_counts(
    params: DlczParams,
    eta_deph: float,
    echo_on: bool,
    n_trials: int,
    seed: int,
    point: int = 0,
    workers: int = 1,
) -> tuple[int, int, int]:
    """Sample (N_w, N_r, N_wr) trial by trial from the joint click model.

    Each trial falls into one of four outcome cells drawn from one uniform.
    Trials are generated in blocks of ``TRIAL_BLOCK`` with substream
    (seed; stream, point, block), so counts do not depend on ``workers``.
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials!r}")
    p_w, p_r, p_wr = model_probabilities(params, eta_deph, echo_on)
    edges = np.cumsum([p_wr, p_w - p_wr, p_r - p_wr])
    n_blocks = -(-n_trials // TRIAL_BLOCK)

    def block(b):
        count = min(TRIAL_BLOCK, n_trials - b * TRIAL_BLOCK)
        u = block_generator(seed, _COUNT_STREAM, point, b).random(count)
        cell = np.searchsorted(edges, u, side="right")
        return np.bincount(cell, minlength=4)[:3]

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(block, range(n_blocks)))
    else:
        parts = [block(b) for b in range(n_blocks)]
    wr, w_only, r_only = (int(v) for v in np.sum(parts, axis=0))
    return wr + w_only, wr + r_only, wr


def nonclassicality_margin(point: CorrelationPoint, n_sigma: float = 1.0) -> tuple[float, bool]:
    """(g2 - 2, g2 - n_sigma * stderr > 2)."""
    margin = point.g2 - 2.0
    return margin, margin - n_sigma * point.stderr_g2 > 0


def storage_efficiency(
    geom: BeamGeometry,
    spec: EnsembleSpec,
    T: float,
    echo_on: bool,
    epsilon: float = 0.0,
    mode: str = "closed_form",
    mode_exit: bool = False,
    atoms: Optional[AtomSample] = None,
) -> float:
    """Retrieval efficiency at T, with the rephasing pulse pair when ``echo_on``.

    Raises InfeasibleScheduleError when no pulse pair fits inside [0, T].
    """
    if echo_on:
        sched = schedule_for(geom, T, epsilon)
        t1, dt = sched.t1, sched.dt
    else:
        t1, dt = None, None
    if mode == "closed_form":
        return retrieval_efficiency_closed_form(geom, spec, T, dt, epsilon if echo_on else 0.0, mode_exit)
    if mode != "mc":
        raise ValueError(f"mode must be 'mc' or 'closed_form', got {mode!r}")
    if atoms is None:
        raise ValueError("mc mode needs an atom sample")
    t2 = None if t1 is None else t1 + dt
    eta, _ = simulate_readout(atoms, geom, T, t1, t2, epsilon if echo_on else 0.0, mode_exit, spec.mode_waist)
    return min(max(eta, 0.0), 1.0)


def g2_curve(
    params: DlczParams,
    geom: BeamGeometry,
    spec: EnsembleSpec,
    T_list: Sequence[float],
    echo_on: bool,
    epsilon: float = 0.0,
    mode: str = "closed_form",
    mode_exit: bool = False,
    n_trials: Optional[int] = None,
    simulate: bool = False,
    seed: int = 0,
    workers: int = 1,
) -> list[CorrelationPoint]:
    """Correlation points along T.

    Points whose echo schedule is infeasible are kept with NaN values and an
    "infeasible" flag.  With ``simulate`` each g2 comes from
    :func:`simulate_counts`; otherwise from the model, with the expected
    count-level standard error when ``n_trials`` is given.
    """
    if simulate and n_trials is None:
        raise ValueError("simulate=True needs n_trials")
    atoms = sample_atoms(spec, seed, workers=workers) if mode == "mc" else None
    nan = float("nan")
    out = []
    for idx, T in enumerate(T_list):
        try:
            eta = storage_efficiency(geom, spec, T, echo_on, epsilon, mode, mode_exit, atoms)
        except InfeasibleScheduleError as exc:
            out.append(CorrelationPoint(T, nan, nan, nan, nan, nan, echo_on, (f"infeasible: {exc}",)))
            continue
        p_w, p_r, p_wr = model_probabilities(params, eta, echo_on)
        if simulate:
            n_w, n_r, n_wr = simulate_counts(params, eta, echo_on, n_trials, seed, idx, workers)
            p_w, p_r, p_wr = n_w / n_trials, n_r / n_trials, n_wr / n_trials
            g2, se = g2_from_counts(n_w, n_r, n_wr, n_trials)
        else:
            g2 = g2_estimate(p_w, p_r, p_wr)
            se = expected_stderr(p_w, p_r, p_wr, n_trials) if n_trials else 0.0
        out.append(CorrelationPoint(T, p_w, p_r, p_wr, g2, se, echo_on))
    return out
