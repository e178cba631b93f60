"""Least-squares fits for the Rabi, Delta-t-scan and lifetime curves.

A damped Gauss-Newton (Levenberg-Marquardt) loop with analytic Jacobians
serves the four model families below.  Standard errors come from the
inverse Gram matrix of the Jacobian scaled by the residual variance, the
usual linearized estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

MAX_ITER = 200
XTOL = 1e-10
GTOL = 1e-12


class FitError(ValueError):
    pass


@dataclass
class FitResult:
    model: str
    parameters: dict[str, float]
    stderrs: dict[str, float]
    residual_rms: float
    converged: bool
    n_iter: int
    flags: list[str] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return self.parameters[name]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "parameters": dict(self.parameters),
            "stderrs": dict(self.stderrs),
            "residual_rms": self.residual_rms,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "flags": list(self.flags),
            "info": dict(self.info),
        }


# --- models: f(x, p) and jac(x, p) -> (n, k) -----------------------------------


def damped_cosine(t, A, B, freq, gamma):
    """I(t) = A cos(2 pi freq t) exp(-gamma t) + B."""
    return A * np.cos(2 * np.pi * freq * t) * np.exp(-gamma * t) + B


def _damped_cosine_jac(t, p):
    A, _, f, g = p
    c, s, e = np.cos(2 * np.pi * f * t), np.sin(2 * np.pi * f * t), np.exp(-g * t)
    return np.column_stack([c * e, np.ones_like(t), -A * 2 * np.pi * t * s * e, -A * t * c * e])


def gaussian_peak(x, amplitude, center, width, offset):
    """amplitude exp(-((x - center) / width)^2) + offset; width is the 1/e half-width."""
    return amplitude * np.exp(-(((x - center) / width) ** 2)) + offset


def _gaussian_peak_jac(x, p):
    a, mu, w, _ = p
    u = (x - mu) / w
    g = np.exp(-(u**2))
    return np.column_stack([g, a * g * 2 * u / w, a * g * 2 * u**2 / w, np.ones_like(x)])


def exponential_decay(t, y0, tau, c):
    return y0 * np.exp(-t / tau) + c


def _exponential_decay_jac(t, p):
    y0, tau, _ = p
    e = np.exp(-t / tau)
    return np.column_stack([e, y0 * e * t / tau**2, np.ones_like(t)])


def gaussian_decay(t, y0, tau, c):
    return y0 * np.exp(-((t / tau) ** 2)) + c


def _gaussian_decay_jac(t, p):
    y0, tau, _ = p
    g = np.exp(-((t / tau) ** 2))
    return np.column_stack([g, y0 * g * 2 * t**2 / tau**3, np.ones_like(t)])


MODELS: dict[str, tuple[Callable, Callable, tuple[str, ...]]] = {
    "damped_cosine": (damped_cosine, _damped_cosine_jac, ("A", "B", "freq", "gamma")),
    "gaussian_peak": (gaussian_peak, _gaussian_peak_jac, ("amplitude", "center", "width", "offset")),
    "exponential_decay": (exponential_decay, _exponential_decay_jac, ("y0", "tau", "c")),
    "gaussian_decay": (gaussian_decay, _gaussian_decay_jac, ("y0", "tau", "c")),
}


def evaluate(result: FitResult, x) -> np.ndarray:
    f, _, names = MODELS[result.model]
    return f(np.asarray(x, dtype=float), *[result.parameters[n] for n in names])


# --- optimizer --------------------------------------------------------------


def levenberg_marquardt(f, jac, x, y, p0, sigma=None, max_iter=MAX_ITER, xtol=XTOL, gtol=GTOL):
    """Minimize sum(((y - f(x, *p)) / sigma)^2).

    Returns (p, n_iter, converged, jacobian_at_p, weighted_residuals).
    Damping is Marquardt's lambda * diag(J^T J), which keeps the iteration
    invariant under rescaling of individual parameters.
    """
    wts = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    p = np.asarray(p0, dtype=float).copy()

    def residual(p):
        return (y - f(x, *p)) * wts

    r = residual(p)
    cost = r @ r
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = jac(x, p) * wts[:, None]
        JTJ = J.T @ J
        g = J.T @ r
        scale = np.sqrt(np.maximum(np.diag(JTJ), 1e-300))
        if np.max(np.abs(g) / scale) <= gtol * max(1.0, math.sqrt(cost)):
            converged = True
            break
        improved = False
        while lam < 1e16:
            A = JTJ + lam * np.diag(np.diag(JTJ))
            try:
                step = np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            p_new = p + step
            r_new = residual(p_new)
            cost_new = r_new @ r_new
            if np.all(np.isfinite(r_new)) and cost_new <= cost:
                improved = True
                break
            lam *= 10
        if not improved:
            # no downhill step at any damping: we sit at a minimum to machine precision
            converged = True
            break
        small_step = np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol)
        p, r, cost = p_new, r_new, cost_new
        lam = max(lam / 10, 1e-12)
        if small_step:
            converged = True
            break
    J = jac(x, p) * wts[:, None]
    return p, it, converged, J, r


def _finish(model, x, y, p, n_iter, converged, J, r, sigma, flags=None, info=None, free=None) -> FitResult:
    """Package a fit; ``free`` lists the columns of J (fixed parameters get zero error)."""
    _, _, names = MODELS[model]
    n, k = J.shape
    free = list(range(k)) if free is None else list(free)
    dof = max(n - k, 1)
    s2 = (r @ r) / dof if sigma is None else 1.0
    err = np.zeros(len(names))
    try:
        cov = np.linalg.inv(J.T @ J) * s2
        err[free] = np.sqrt(np.abs(np.diag(cov)))
    except np.linalg.LinAlgError:
        err[free] = np.nan
        flags = (flags or []) + ["singular_jacobian"]
    f = MODELS[model][0]
    rms = float(np.sqrt(np.mean((y - f(x, *p)) ** 2)))
    return FitResult(
        model=model,
        parameters={n_: float(v) for n_, v in zip(names, p)},
        stderrs={n_: float(e) for n_, e in zip(names, err)},
        residual_rms=rms,
        converged=bool(converged),
        n_iter=int(n_iter),
        flags=list(flags or []),
        info=dict(info or {}),
    )


def _prepare(data, yerr=None, min_points=1):
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise FitError("data must be a sequence of (x, y) or (x, y, yerr) rows")
    x, y = arr[:, 0], arr[:, 1]
    if yerr is None and arr.shape[1] == 3:
        yerr = arr[:, 2]
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    if yerr is not None:
        yerr = np.asarray(yerr, dtype=float)[order]
    if len(x) < min_points:
        raise FitError(f"need at least {min_points} points, got {len(x)}")
    return x, y, yerr


def fit_model(model: str, data, p0: Sequence[float], yerr=None) -> FitResult:
    """Fit any of :data:`MODELS` from an explicit starting point."""
    f, jac, _ = MODELS[model]
    x, y, yerr = _prepare(data, yerr)
    p, n_iter, conv, J, r = levenberg_marquardt(f, jac, x, y, p0, yerr)
    return _finish(model, x, y, p, n_iter, conv, J, r, yerr)


# --- Rabi oscillation ------------------------------------------------------------


def spectral_peak(t: np.ndarray, y: np.ndarray, oversample: int = 16) -> float:
    """Frequency of the largest periodogram peak (direct DFT, any sampling)."""
    span = t[-1] - t[0]
    dt = np.median(np.diff(t))
    if span <= 0 or dt <= 0:
        raise FitError("time axis must be strictly increasing")
    n_f = max(int(oversample * span / dt / 2), 16)
    freqs = np.linspace(0.0, 0.5 / dt, n_f + 1)[1:]
    yc = y - y.mean()
    power = np.abs(np.exp(-2j * np.pi * np.outer(freqs, t)) @ yc) ** 2
    i = int(np.argmax(power))
    if 0 < i < len(freqs) - 1:
        a, b, c = np.log(power[i - 1 : i + 2] + 1e-300)
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
        return float(freqs[i] + shift * (freqs[1] - freqs[0]))
    return float(freqs[i])


def fit_damped_cosine(data, yerr=None) -> FitResult:
    """Fit I(t) = A cos(2 pi freq t) exp(-gamma t) + B; ``freq`` is the Rabi frequency."""
    x, y, yerr = _prepare(data, yerr, min_points=8)
    freq0 = spectral_peak(x, y)
    flags = []
    if (x[-1] - x[0]) * freq0 < 1.0:
        flags.append("less_than_one_period")
    B0 = float(y.mean())
    c = np.cos(2 * np.pi * freq0 * x)
    A0 = float(np.dot(c, y - B0) / np.dot(c, c))
    p0 = [A0, B0, freq0, 0.0]
    f, jac, _ = MODELS["damped_cosine"]
    p, n_iter, conv, J, r = levenberg_marquardt(f, jac, x, y, p0, yerr)
    res = _finish("damped_cosine", x, y, p, n_iter, conv, J, r, yerr, flags, {"freq_init": freq0})
    res.info["residual_rms_init"] = float(np.sqrt(np.mean((y - f(x, *p0)) ** 2)))
    return res


def pi_pulse_fidelity(fit: FitResult) -> float:
    """Transfer at the pi time 1/(2 freq), normalized by the fitted contrast.

    (I(t_pi) - I(0)) / (-2A) = (1 + exp(-gamma t_pi)) / 2.
    """
    if fit.model != "damped_cosine" or not fit.converged:
        raise FitError("pi_pulse_fidelity needs a converged damped-cosine fit")
    A, B, freq, gamma = (fit.parameters[k] for k in ("A", "B", "freq", "gamma"))
    if not freq > 0 or A == 0:
        raise FitError(f"invalid Rabi fit: freq={freq!r}, A={A!r}")
    t_pi = 1.0 / (2 * freq)
    i0 = damped_cosine(0.0, A, B, freq, gamma)
    ipi = damped_cosine(t_pi, A, B, freq, gamma)
    return float((ipi - i0) / (-2 * A))


def rabi_curve(t, freq, gamma, amplitude=-0.5, offset=0.5) -> np.ndarray:
    """Population in |s> versus Raman pulse length, starting from |g>."""
    return damped_cosine(np.asarray(t, dtype=float), amplitude, offset, freq, gamma)


# --- Gaussian peak ---------------------------------------------------------------


def fit_gaussian_peak(data, yerr=None) -> FitResult:
    """Gaussian with offset; reports center and 1/e half-width."""
    x, y, yerr = _prepare(data, yerr, min_points=5)
    flags = []
    i = int(np.argmax(y))
    if i == 0 or i == len(y) - 1:
        flags.append("peak_not_bracketed")
    offset0 = float(min(y[0], y[-1]))
    amp0 = float(y[i] - offset0)
    w = np.clip(y - offset0, 0, None)
    if w.sum() > 0:
        mu0 = float(np.sum(w * x) / w.sum())
        width0 = float(math.sqrt(2 * np.sum(w * (x - mu0) ** 2) / w.sum())) or (x[-1] - x[0]) / 4
    else:
        mu0, width0 = float(x[i]), (x[-1] - x[0]) / 4
    p0 = [amp0, mu0, width0, offset0]
    f, jac, _ = MODELS["gaussian_peak"]
    p, n_iter, conv, J, r = levenberg_marquardt(f, jac, x, y, p0, yerr)
    p[2] = abs(p[2])
    return _finish("gaussian_peak", x, y, p, n_iter, conv, J, r, yerr, flags)


# --- lifetimes -------------------------------------------------------------------


def _decay_init(x, y, form, baseline=None):
    if baseline is None:
        c0 = float(y[-1]) if len(y) > 2 else 0.0
        # offset just below the smallest value keeps the logs finite
        c0 = min(c0, float(y.min())) - 1e-3 * float(np.ptp(y))
    else:
        c0 = baseline
    z = y - c0
    ok = z > 0
    if ok.sum() < 2:
        return None
    lx = x[ok] if form == "exponential" else x[ok] ** 2
    slope, intercept = np.polyfit(lx, np.log(z[ok]), 1)
    if slope >= 0:
        return None
    tau0 = -1.0 / slope if form == "exponential" else math.sqrt(-1.0 / slope)
    return [math.exp(intercept), tau0, c0]


def _fit_decay_form(x, y, yerr, form, baseline=None) -> Optional[FitResult]:
    model = "exponential_decay" if form == "exponential" else "gaussian_decay"
    p0 = _decay_init(x, y, form, baseline)
    if p0 is None:
        return None
    f, jac, _ = MODELS[model]
    if baseline is None:
        p, n_iter, conv, J, r = levenberg_marquardt(f, jac, x, y, p0, yerr)
        p[1] = abs(p[1])
        return _finish(model, x, y, p, n_iter, conv, J, r, yerr)
    # offset held fixed: optimize (y0, tau) only
    p2, n_iter, conv, J, r = levenberg_marquardt(
        lambda t, y0, tau: f(t, y0, tau, baseline), lambda t, q: jac(t, [*q, baseline])[:, :2], x, y, p0[:2], yerr
    )
    return _finish(
        model, x, y, [p2[0], abs(p2[1]), baseline], n_iter, conv, J, r, yerr, info={"fixed_offset": baseline}, free=(0, 1)
    )


def fit_lifetime_1e(data, form: str = "exponential", yerr=None, baseline: Optional[float] = None) -> FitResult:
    """1/e lifetime from y0 exp(-t/tau) + c or y0 exp(-(t/tau)^2) + c.

    Both forms are fitted; the requested one is returned and
    ``info["better_form"]`` names the one with the smaller residual RMS.
    ``baseline`` pins the offset c (e.g. 1 for a correlation function that
    decays to the uncorrelated value), which keeps slow decays identifiable
    when the data do not reach the asymptote.
    """
    if form not in ("exponential", "gaussian"):
        raise FitError(f"form must be 'exponential' or 'gaussian', got {form!r}")
    x, y, yerr = _prepare(data, yerr, min_points=5)
    names = MODELS["exponential_decay" if form == "exponential" else "gaussian_decay"][2]
    span = float(np.ptp(y))
    non_decaying = span <= 1e-12 * max(1.0, float(np.abs(y).max())) or np.polyfit(x, y, 1)[0] >= 0
    fits = {} if non_decaying else {f_: _fit_decay_form(x, y, yerr, f_, baseline) for f_ in ("exponential", "gaussian")}
    chosen = fits.get(form)
    if chosen is None or chosen.parameters["y0"] <= 0:
        model = "exponential_decay" if form == "exponential" else "gaussian_decay"
        return FitResult(
            model=model,
            parameters={n: float("nan") for n in names},
            stderrs={n: float("nan") for n in names},
            residual_rms=float("nan"),
            converged=False,
            n_iter=0,
            flags=["non_decaying"],
        )
    valid = {k: v for k, v in fits.items() if v is not None}
    chosen.info["better_form"] = min(valid, key=lambda k: valid[k].residual_rms)
    chosen.info["residual_rms_by_form"] = {k: v.residual_rms for k, v in valid.items()}
    return chosen
