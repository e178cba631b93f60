"""Command-line front end: one subcommand per experiment, CSV/JSON artifacts.

Exit codes: 0 success, 2 configuration or flag error, 3 infeasible physics
(no rephasing schedule, degenerate geometry), 4 fit did not converge.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load
from .dynamics import retrieval_efficiency_closed_form, simulate_readout, storage_time
from .ensemble import block_generator, mean_speed, sample_atoms, thermal_sigma_v
from .fitting import FitError, fit_damped_cosine, fit_gaussian_peak, fit_lifetime_1e, pi_pulse_fidelity, rabi_curve
from .geometry import (
    DegenerateGeometryError,
    raman_wavevector,
    rephasing_ratio,
    rephasing_ratio_small_angle,
    spinwave_wavevector,
)
from .noise import (
    default_grid,
    far_field_floor,
    incoherent_noise_floor,
    lobe_full_width,
    lobe_widths,
    mode_atom_numbers,
    noise_into_mode,
    noise_into_mode_closed_form,
    readout_mode,
    sample_noise_map,
    scale_noise_probability,
)
from .photon_stats import g2_curve, nonclassicality_margin
from .scheduler import InfeasibleScheduleError, default_dt_range, ratio_vs_angle, scan_delta_t, scan_width, schedule_for

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NONCONVERGED = 0, 2, 3, 4

# stream ids for the few draws the CLI makes itself
_RABI_NOISE_STREAM = 11


class NonConvergenceError(RuntimeError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else f"{v:.10g}"


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, NaN/inf to None, floats rounded to 12 digits."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(f"{v:.12g}") if math.isfinite(v) else None
    return obj


class Artifacts:
    """Collects output files in memory; nothing touches disk until commit()."""

    def __init__(self, cfg: RunConfig, seed: int, subcommand: str, extra: Optional[dict] = None):
        self.meta = {
            "tool": f"spinecho {__version__}",
            "subcommand": subcommand,
            "config": cfg.source or "<defaults>",
            "config_sha256": cfg.sha256,
            "seed": seed,
        }
        self.meta.update(extra or {})
        self.files: dict[str, str] = {}

    def csv(self, name: str, header: Sequence[str], rows, extra_meta: Optional[dict] = None):
        buf = io.StringIO()
        for k, v in {**self.meta, **(extra_meta or {})}.items():
            buf.write(f"# {k}: {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        self.files[name] = buf.getvalue()

    def json(self, name: str, payload: dict):
        body = {"meta": self.meta, **payload}
        self.files[name] = json.dumps(_clean(body), indent=2, allow_nan=False) + "\n"

    def commit(self, out_dir: Path) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, text in self.files.items():
            p = out_dir / name
            p.write_text(text, encoding="utf-8")
            paths.append(p)
        return paths


# --- subcommands -------------------------------------------------------------


def cmd_rabi(cfg: RunConfig, args, art: Artifacts):
    r = cfg.rabi
    t = np.linspace(0.0, r.t_max_us * 1e-6, r.points)
    y = rabi_curve(t, r.freq_khz * 1e3, r.gamma_khz * 1e3, r.amplitude, r.offset)
    if r.noise > 0:
        y = y + r.noise * block_generator(art.meta["seed"], _RABI_NOISE_STREAM).standard_normal(len(t))
    fit = fit_damped_cosine(np.column_stack([t, y]))
    model = rabi_curve(t, fit["freq"], fit["gamma"], fit["A"], fit["B"])
    art.csv("rabi.csv", ["tau_us", "population", "fit"], zip(t * 1e6, y, model))
    art.json(
        "rabi.json",
        {
            "freq_khz": fit["freq"] * 1e-3,
            "freq_khz_stderr": fit.stderrs["freq"] * 1e-3,
            "gamma_khz": fit["gamma"] * 1e-3,
            "gamma_khz_stderr": fit.stderrs["gamma"] * 1e-3,
            "amplitude": fit["A"],
            "offset": fit["B"],
            "pi_time_us": 1e6 / (2 * fit["freq"]),
            "pi_pulse_fidelity": pi_pulse_fidelity(fit),
            "converged": fit.converged,
            "flags": fit.flags,
        },
    )
    if not fit.converged:
        raise NonConvergenceError("Rabi fit did not converge")


def _T_grid(max_us: float, points: int) -> np.ndarray:
    return np.linspace(max_us / points, max_us, points) * 1e-6


def cmd_dephase(cfg: RunConfig, args, art: Artifacts):
    geom, spec = cfg.geometry_obj(), cfg.ensemble_spec()
    T = _T_grid(args.T_us or cfg.scan.dephase_T_max_us, args.points or cfg.scan.dephase_points)
    if cfg.run.mode == "mc":
        atoms = sample_atoms(spec, art.meta["seed"], workers=args.workers)
        res = np.array([simulate_readout(atoms, geom, t) for t in T])
        eta, se = res[:, 0], res[:, 1]
    else:
        eta = np.array([retrieval_efficiency_closed_form(geom, spec, t) for t in T])
        se = np.zeros_like(eta)
    theory = np.array([retrieval_efficiency_closed_form(geom, spec, t) for t in T])
    art.csv("dephase.csv", ["T_us", "eta", "stderr", "eta_closed_form"], zip(T * 1e6, eta, se, theory))
    fit = fit_lifetime_1e(np.column_stack([T, eta]), form="gaussian", baseline=0.0)
    art.json(
        "dephase.json",
        {
            "mode": cfg.run.mode,
            "tau_fit_us": fit["tau"] * 1e6,
            "tau_fit_us_stderr": fit.stderrs["tau"] * 1e6,
            "tau_theory_us": storage_time(geom, spec) * 1e6,
            "k_s_per_m": float(np.linalg.norm(spinwave_wavevector(geom))),
            "sigma_v_rms_1d_m_per_s": thermal_sigma_v(spec),
            "mean_speed_m_per_s": mean_speed(spec),
            "tau_with_mean_speed_us": 1e6 / (float(np.linalg.norm(spinwave_wavevector(geom))) * mean_speed(spec)),
            "fit_converged": fit.converged,
            "fit_flags": fit.flags,
        },
    )
    if not fit.converged:
        raise NonConvergenceError("dephasing lifetime fit did not converge")


def _check_schedulable(geom):
    ratio = rephasing_ratio(geom)
    if ratio > 1:
        raise InfeasibleScheduleError(f"Delta t / T = {ratio:.4g} > 1 for theta_pi = {math.degrees(geom.theta_pi):.4g} deg")


def cmd_echo_scan(cfg: RunConfig, args, art: Artifacts):
    geom, spec = cfg.geometry_obj(), cfg.ensemble_spec()
    T = (args.T_us or cfg.scan.T_us) * 1e-6
    _check_schedulable(geom)
    lo, hi = default_dt_range(geom, spec, T)
    dt_min = args.dt_min_us if args.dt_min_us is not None else cfg.scan.dt_min_us
    dt_max = args.dt_max_us if args.dt_max_us is not None else cfg.scan.dt_max_us
    lo = lo if dt_min is None else dt_min * 1e-6
    hi = hi if dt_max is None else dt_max * 1e-6
    if not 0 < lo < hi <= T:
        raise ConfigError(f"Delta t range must satisfy 0 < min < max <= T, got ({lo * 1e6:g}, {hi * 1e6:g}) us with T = {T * 1e6:g} us")
    eps = cfg.pulses.epsilon if args.epsilon_pct is None else args.epsilon_pct / 100
    curve = scan_delta_t(
        geom, spec, T, (lo, hi), args.points or cfg.scan.points, cfg.run.mode, eps, seed=art.meta["seed"], workers=args.workers
    )
    art.csv("echo_scan.csv", ["dt_us", "eta", "stderr"], zip(curve.dt * 1e6, curve.eta, curve.stderr), {"T_us": _fmt(T * 1e6)})
    fit = fit_gaussian_peak(np.column_stack([curve.dt, curve.eta]))
    art.json(
        "echo_scan.json",
        {
            "mode": cfg.run.mode,
            "T_us": T * 1e6,
            "epsilon": eps,
            "center_us": fit["center"] * 1e6,
            "center_us_stderr": fit.stderrs["center"] * 1e6,
            "half_width_1e_us": fit["width"] * 1e6,
            "half_width_1e_us_stderr": fit.stderrs["width"] * 1e6,
            "peak_eta": fit["amplitude"] + fit["offset"],
            "center_theory_us": rephasing_ratio(geom) * T * 1e6,
            "half_width_theory_us": scan_width(geom, spec) * 1e6,
            "fit_converged": fit.converged,
            "fit_flags": fit.flags,
        },
    )
    if not fit.converged:
        raise NonConvergenceError("Delta t peak fit did not converge")


def cmd_ratio_scan(cfg: RunConfig, args, art: Artifacts):
    geom, spec = cfg.geometry_obj(), cfg.ensemble_spec()
    T = (args.T_us or cfg.scan.T_us) * 1e-6
    for th in cfg.scan.theta_pi_deg:
        _check_schedulable(geom.replace(theta_pi=math.radians(th)))
    pts = ratio_vs_angle(
        geom,
        [math.radians(t) for t in cfg.scan.theta_pi_deg],
        spec,
        T,
        cfg.run.mode,
        args.points or cfg.scan.points,
        art.meta["seed"],
        workers=args.workers,
    )
    exact = [rephasing_ratio(geom.replace(theta_pi=p.theta_pi)) for p in pts]
    rows = [(math.degrees(p.theta_pi), p.ratio, p.ratio_theory, e, p.dt_peak * 1e6) for p, e in zip(pts, exact)]
    art.csv("ratio_scan.csv", ["theta_pi_deg", "ratio", "ratio_small_angle", "ratio_exact", "dt_peak_us"], rows, {"T_us": _fmt(T * 1e6)})
    art.json(
        "ratio_scan.json",
        {
            "mode": cfg.run.mode,
            "T_us": T * 1e6,
            "points": [
                {"theta_pi_deg": r[0], "ratio": r[1], "ratio_small_angle": r[2], "ratio_exact": r[3], "dt_peak_us": r[4]}
                for r in rows
            ],
            "max_relative_deviation": max(abs(r[1] / r[2] - 1) for r in rows),
        },
    )


def cmd_noise_map(cfg: RunConfig, args, art: Artifacts):
    geom, spec = cfg.geometry_obj(), cfg.ensemble_spec()
    n = cfg.noise
    eps = cfg.pulses.epsilon if args.epsilon_pct is None else args.epsilon_pct / 100
    if eps <= 0:
        raise ConfigError("noise-map needs pulses.epsilon_pct > 0")
    grid = default_grid(geom, spec.mode_waist, args.points or n.grid_points, n.extent_widths)
    nmap = sample_noise_map(spec, geom, eps, art.meta["seed"], n.n_shots, grid, n.n_pulses, args.workers)
    tx, ty = np.meshgrid(np.degrees(nmap.theta_x), np.degrees(nmap.theta_y), indexing="ij")
    art.csv(
        "noise_map.csv",
        ["theta_x_deg", "theta_y_deg", "photons_per_shot"],
        zip(tx.ravel(), ty.ravel(), nmap.intensity.ravel()),
        {"epsilon": _fmt(eps), "n_shots": n.n_shots},
    )
    widths = lobe_widths(nmap)
    det = readout_mode(geom, spec.mode_waist, n.detection_efficiency)
    n_mode, n_eff = mode_atom_numbers(spec)
    full_w = lobe_full_width(geom.probe_wavelength, spec.mode_waist)
    exclusion = min(float(np.ptp(nmap.theta_x)), float(np.ptp(nmap.theta_y))) / 2 * 0.8
    art.json(
        "noise_map.json",
        {
            "epsilon": eps,
            "n_shots": n.n_shots,
            "peak_angle_deg": [math.degrees(a) for a in nmap.peak_angle()],
            "expected_center_deg": [math.degrees(a) for a in nmap.expected_center],
            "width_1e_full_deg": [math.degrees(widths["width_x"]), math.degrees(widths["width_y"])],
            "width_1e_full_theory_deg": math.degrees(full_w),
            "peak_to_floor": nmap.peak_to_floor(),
            "floor_per_cell": nmap.floor,
            "far_field_level_per_cell": far_field_floor(nmap, exclusion),
            "floor_formula_per_cell": incoherent_noise_floor(eps, nmap.n_mode, nmap.cell_solid_angle),
            "n_mode_weighted": nmap.n_mode,
            "n_eff": nmap.n_eff,
            "noise_into_readout_mode": noise_into_mode(nmap, det),
            "noise_into_readout_mode_closed_form": noise_into_mode_closed_form(eps, n_mode, n_eff, geom, det, spec.mode_waist, n.n_pulses),
            "flags": nmap.flags,
        },
    )


def cmd_g2_curve(cfg: RunConfig, args, art: Artifacts):
    geom, spec = cfg.geometry_obj(), cfg.ensemble_spec()
    params = cfg.dlcz_params()
    echo_on = args.echo == "on"
    eps = cfg.pulses.epsilon if args.epsilon_pct is None else args.epsilon_pct / 100
    d = cfg.dlcz
    n_pi = scale_noise_probability(d.n_pi_pct / 100, d.n_pi_epsilon_pct / 100, eps) if echo_on else 0.0
    params = params.replace(n_pi=n_pi)
    T_max = (args.T_us or cfg.g2.T_max_us) * 1e-6
    T = np.linspace(cfg.g2.T_min_us * 1e-6, T_max, args.points or cfg.g2.points)
    if echo_on:
        _check_schedulable(geom)
        if cfg.pulses.policy == "fixed_t1":
            raise ConfigError("g2-curve supports pulses.policy = 'centered' only")
    pts = g2_curve(
        params, geom, spec, T, echo_on, eps, cfg.run.mode, d.mode_exit, cfg.run.n_trials, cfg.g2.simulate, art.meta["seed"], args.workers
    )
    art.csv(
        f"g2_curve_echo_{args.echo}.csv",
        ["T_us", "p_w", "p_r", "p_wr", "g2", "stderr", "echo_on"],
        [(p.T * 1e6, p.p_w, p.p_r, p.p_wr, p.g2, p.stderr_g2, p.echo_on) for p in pts],
        {"epsilon": _fmt(eps), "n_pi": _fmt(n_pi), "n_trials": cfg.run.n_trials},
    )
    ok = [p for p in pts if not p.flags]
    if not ok:
        raise InfeasibleScheduleError("no feasible point on the g2 curve")
    t_ok = np.array([p.T for p in ok])
    g_ok = np.array([p.g2 for p in ok])
    above = t_ok[g_ok > 2]
    fit = fit_lifetime_1e(np.column_stack([t_ok, g_ok]), form="exponential", baseline=1.0)
    margin, nonclassical = nonclassicality_margin(ok[0])
    art.json(
        f"g2_curve_echo_{args.echo}.json",
        {
            "echo_on": echo_on,
            "mode": cfg.run.mode,
            "epsilon": eps,
            "params": {
                "chi": params.chi, "eta_w": params.eta_w, "eta_r": params.eta_r,
                "dark_w": params.dark_w, "dark_r": params.dark_r, "n_pi": params.n_pi,
            },
            "initial_g2": ok[0].g2,
            "initial_margin": margin,
            "initial_nonclassical_1sigma": nonclassical,
            "lifetime_1e_us": fit["tau"] * 1e6,
            "lifetime_1e_us_stderr": fit.stderrs["tau"] * 1e6,
            "lifetime_form": "exponential, offset fixed at 1",
            "better_form": fit.info.get("better_form"),
            "max_T_us_with_g2_above_2": float(above.max() * 1e6) if len(above) else None,
            "skipped_points": [{"T_us": p.T * 1e6, "reason": p.flags[0]} for p in pts if p.flags],
            "fit_converged": fit.converged,
        },
    )
    if not fit.converged:
        raise NonConvergenceError("g2 lifetime fit did not converge")


def cmd_schedule(cfg: RunConfig, args, art: Artifacts):
    geom = cfg.geometry_obj()
    T = (args.T_us or cfg.scan.T_us) * 1e-6
    eps = cfg.pulses.epsilon if args.epsilon_pct is None else args.epsilon_pct / 100
    s = schedule_for(geom, T, eps, cfg.pulses.t1())
    payload = {
        "T_us": T * 1e6,
        "t1_us": s.t1 * 1e6,
        "t2_us": s.t2 * 1e6,
        "dt_us": s.dt * 1e6,
        "ratio": rephasing_ratio(geom),
        "ratio_small_angle": rephasing_ratio_small_angle(geom),
        "k_s_per_m": float(np.linalg.norm(spinwave_wavevector(geom))),
        "k_pi_per_m": float(np.linalg.norm(raman_wavevector(geom))),
        "pulses": [
            {"time_us": p.time * 1e6, "sign": p.sign, "epsilon": p.epsilon, "k_pi_per_m": [float(v) for v in p.k_pi]}
            for p in s.pulses
        ],
    }
    art.json("schedule.json", payload)
    print(json.dumps(_clean(payload), indent=2))


_FIT_MODELS = ("damped_cosine", "gaussian_peak", "exponential", "gaussian")


def cmd_fit(cfg: RunConfig, args, art: Artifacts):
    if args.input is None:
        raise ConfigError("fit needs --input CSV with columns x, y[, yerr]")
    try:
        raw = Path(args.input).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read --input {args.input!r}: {exc.strerror}") from exc
    lines = [ln for ln in raw.decode("utf-8").splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    rows = list(csv.reader(lines))
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"--input {args.input!r}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] not in (2, 3):
        raise ConfigError(f"--input {args.input!r} needs 2 or 3 numeric columns")
    xy = data[:, :2]
    yerr = data[:, 2] if data.shape[1] == 3 else None
    if args.model == "damped_cosine":
        fit = fit_damped_cosine(xy, yerr)
    elif args.model == "gaussian_peak":
        fit = fit_gaussian_peak(xy, yerr)
    else:
        fit = fit_lifetime_1e(xy, form=args.model, yerr=yerr, baseline=args.baseline)
    payload = {"input": args.input, "input_sha256": hashlib.sha256(raw).hexdigest(), **fit.to_dict()}
    if args.model == "damped_cosine" and fit.converged:
        payload["pi_pulse_fidelity"] = pi_pulse_fidelity(fit)
    art.json("fit.json", payload)
    if not fit.converged:
        raise NonConvergenceError(f"{args.model} fit did not converge ({', '.join(fit.flags) or 'no flags'})")


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


COMMANDS = {
    "rabi": (cmd_rabi, "Rabi oscillation: synthesize, fit, report pi-pulse fidelity"),
    "dephase": (cmd_dephase, "retrieval efficiency versus storage time without echo"),
    "echo-scan": (cmd_echo_scan, "efficiency versus pulse spacing at fixed readout time"),
    "ratio-scan": (cmd_ratio_scan, "optimal spacing / T versus Raman angle"),
    "noise-map": (cmd_noise_map, "angular distribution of pi-pulse noise"),
    "g2-curve": (cmd_g2_curve, "write/read cross-correlation versus storage time"),
    "schedule": (cmd_schedule, "pulse timings satisfying the rephasing condition"),
    "fit": (cmd_fit, "standalone fit of a CSV (x, y[, yerr])"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinecho", description="Spin-echo spin-wave memory simulator.")
    parser.add_argument("--version", action="version", version=f"spinecho {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="TOML run configuration (defaults built in)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="output directory (overrides run.out_dir)")
        p.add_argument("--mode", choices=("mc", "cf"), help="Monte Carlo or closed form")
        p.add_argument("--workers", type=int, default=1, help="threads for parallel kernels (results do not depend on it)")
        p.add_argument("--T-us", dest="T_us", type=float, help="readout time, or the upper end of a T sweep")
        p.add_argument("--points", type=int, help="number of sample points")
        p.add_argument("--epsilon-pct", dest="epsilon_pct", type=float, help="override pulses.epsilon_pct")
        if name == "echo-scan":
            p.add_argument("--dt-min-us", dest="dt_min_us", type=float)
            p.add_argument("--dt-max-us", dest="dt_max_us", type=float)
        if name == "g2-curve":
            p.add_argument("--echo", choices=("on", "off"), default="off")
        if name == "fit":
            p.add_argument("--input", help="CSV with columns x, y[, yerr]")
            p.add_argument("--model", choices=_FIT_MODELS, default="exponential")
            p.add_argument("--baseline", type=float, help="fix the decay offset (exponential/gaussian)")
    return parser


def _check_flags(args):
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
    if args.workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {args.workers}")
    for name in ("T_us", "points"):
        v = getattr(args, name)
        if v is not None and not v > 0:
            raise ConfigError(f"--{name.replace('_', '-')} must be > 0, got {v}")
    if args.points is not None and args.points < 3:
        raise ConfigError(f"--points must be >= 3, got {args.points}")
    if args.epsilon_pct is not None and not 0 <= args.epsilon_pct <= 50:
        raise ConfigError(f"--epsilon-pct must lie in [0, 50], got {args.epsilon_pct}")


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _check_flags(args)
        cfg = load(args.config)
        if args.mode is not None:
            cfg.run.mode = "mc" if args.mode == "mc" else "closed_form"
        seed = cfg.run.seed if args.seed is None else args.seed
        out_dir = Path(args.out if args.out is not None else cfg.run.out_dir)
        art = Artifacts(cfg, seed, args.command)
        COMMANDS[args.command][0](cfg, args, art)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleScheduleError, DegenerateGeometryError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NonConvergenceError, FitError) as exc:
        # partial artifacts still carry the diagnostics
        if "art" in locals() and art.files:
            art.commit(out_dir)
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in art.commit(out_dir):
        print(p)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
