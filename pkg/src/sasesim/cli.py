"""Command-line driver: run one study from a JSON config or a named preset.

Every subcommand writes CSV (one file per curve) or JSON files whose header
records the full config, the master seed and the package version. Progress
goes to standard error. Exit codes: 0 success, 2 invalid config, 3 numerical
diagnostic abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import set_workers
from .atomsolver import NumericalDiagnosticError, detuning_scan
from .config import ConfigError, SimulationConfig, convert_units, load_config
from .decorr import decorrelation_error_curve, pdm_scan
from .fieldstats import (
    InsufficientSamplesError,
    accumulate_ensemble,
    coherence_vs_lag,
    energy_spectral_density,
    fit_energy_distribution,
    fit_intensity_distribution,
    mode_number,
)
from .io import header_lines, write_csv, write_json
from .lineshape import RangeTooNarrowError, fit_voigt, voigt_width
from .noisegen import PsdFamily, generate_noise, theoretical_g1
from .pulse import combined_bandwidth, fourier_limited_bandwidth, grid_for, make_pulse
from .workflows import linear_fit, noise_fwhm_curve, pdm_fwhm_curve

__all__ = ["main", "build_parser", "PRESETS", "run_command", "output_dir"]

log = logging.getLogger("sasesim")

OUTDIR_ENV = "SASESIM_OUTDIR"
DEFAULT_OUTDIR = "sasesim_out"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# Preset = list of (subcommand, config overrides, subdirectory).
_LINE_RABI = [1e-2, 1e-1, 1.0]
_DECOR_RABI = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0]
_FIELD_KR = {"units_mode": "physical_kr", "psd_family": "gaussian", "tau": 10.0, "n_traj": 1000}
PRESETS: dict[str, dict] = {
    "fig1": {
        "config": {**_FIELD_KR, "sigma_omega": 0.14, "n_samples": 2},
        "runs": [("gen-pulses", {"envelope": "gaussian"}, "gaussian"),
                 ("gen-pulses", {"envelope": "flattop"}, "flattop")],
    },
    "fig3": {
        "config": {**_FIELD_KR, "sigma_omega": 0.25, "probe_offset": 5.0},
        "runs": [("field-stats", {}, "")],
    },
    "fig4": {
        "config": {**_FIELD_KR, "sigma_omega": 0.25, "probe_offset": 5.0, "max_lag": 30.0},
        "runs": [("field-stats", {}, "")],
    },
    "decor": {
        "config": {"tau": 3.0, "n_traj": 5000, "detuning": 0.0,
                   "gamma_values": [6.67, 3.33, 1.67, 1.11],
                   "families": ["gaussian", "lorentzian"], "rabi_values": _DECOR_RABI},
        "runs": [("decorr-error", {}, "")],
    },
    "line1": {
        "config": {"psd_family": "lorentzian", "tau": 3.0, "n_traj": 2000,
                   "gamma_values": [13.33, 6.67, 3.33, 1.67, 1.11, 0.83],
                   "rabi_values": _LINE_RABI,
                   "detuning_min": 0.0, "detuning_max": 10.0, "detuning_step": 0.25},
        "runs": [("scan", {}, ""), ("pdm-scan", {}, "")],
    },
    "line2": {
        "config": {"psd_family": "gaussian", "tau": 3.0, "n_traj": 2000,
                   "gamma_values": [15.70, 7.85, 3.92, 1.96, 1.31, 0.98],
                   "rabi_values": _LINE_RABI,
                   "detuning_min": 0.0, "detuning_max": 10.0, "detuning_step": 0.25},
        "runs": [("scan", {}, ""), ("pdm-scan", {}, "")],
    },
    "fw": {
        "config": {"psd_family": "gaussian", "rabi_peak": 1e-2, "n_traj": 2000,
                   "tau_values": [3.0, 20.0],
                   "gamma_values": [1.0, 2.0, 4.0, 6.67, 10.0, 13.33],
                   "delta_omega_values": [0.6, 1.0, 2.0, 4.0, 8.0, 16.0]},
        "runs": [("fwhm-curve", {}, "")],
    },
    "exp": {
        "config": {"psd_family": "gaussian", "gamma": 0.72, "tau": 20.0, "rabi_peak": 1e-2,
                   "n_traj": 2000, "detuning_min": 0.0, "detuning_max": 3.0,
                   "detuning_step": 0.05},
        "runs": [("scan", {}, "")],
    },
}


def output_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTDIR_ENV) or DEFAULT_OUTDIR)


def _tag(x: float) -> str:
    return f"{x:g}".replace(".", "p").replace("-", "m").replace("+", "")


def _header(cfg: SimulationConfig, **extra) -> list[str]:
    return header_lines(cfg.to_dict(), cfg.master_seed, **extra)


# -- field statistics (run in the config's own units) ------------------------

def _field_psd(cfg: SimulationConfig):
    psd = cfg.psd()
    if psd is None:
        raise ConfigError(["psd_family: field commands need a noise spectrum"])
    return psd


def cmd_gen_pulses(cfg: SimulationConfig, out: Path, workers: int) -> list[Path]:
    env = cfg.envelope_obj()
    psd = _field_psd(cfg)
    grid = grid_for(env, psd, cfg.gamma2_value)
    hdr = _header(cfg, units=cfg.units_mode)
    paths = []
    for i in range(cfg.n_samples):
        p = make_pulse(generate_noise(psd, grid, cfg.master_seed, i), env)
        paths.append(write_csv(out / f"pulse_{i:03d}.csv", {
            "t": p.times, "re_field": p.field.real, "im_field": p.field.imag,
            "intensity": p.intensity, "envelope": env(p.times) * env.peak_intensity,
        }, hdr))
    acc = accumulate_ensemble(env, psd, cfg.n_traj, cfg.master_seed, grid=grid,
                              workers=workers)
    paths.append(write_csv(out / "mean_intensity.csv", {
        "t": acc.times, "mean_intensity": acc.mean_intensity / env.peak_intensity,
        "stderr": acc.intensity_stderr / env.peak_intensity, "envelope": env(acc.times),
    }, hdr))
    log.info("gen-pulses: %d samples, %d-pulse mean intensity", cfg.n_samples, cfg.n_traj)
    return paths


def cmd_field_stats(cfg: SimulationConfig, out: Path, workers: int) -> list[Path]:
    env = cfg.envelope_obj()
    psd = _field_psd(cfg)
    offset = cfg.probe_offset if cfg.probe_offset is not None else 0.5 * cfg.tau
    grid = grid_for(env, psd, cfg.gamma2_value)
    probe = env.t0 + round(offset / grid.dt) * grid.dt
    acc = accumulate_ensemble(env, psd, cfg.n_traj, cfg.master_seed, grid=grid,
                              probe_times=[probe], reference_time=env.t0, workers=workers)
    hdr = _header(cfg, units=cfg.units_mode)
    paths = []
    summary = {"n_traj": cfg.n_traj, "probe_time": probe, "probe_offset": probe - env.t0}
    try:
        fi = fit_intensity_distribution(acc, probe)
        fe = fit_energy_distribution(acc)
    except InsufficientSamplesError as exc:
        log.warning("field-stats: histograms skipped (%s)", exc)
    else:
        paths.append(write_csv(out / "intensity_hist.csv", fi.to_columns(), hdr))
        paths.append(write_csv(out / "energy_hist.csv", fe.to_columns(), hdr))
        oracle = mode_number(env, psd)
        summary.update(
            intensity_chi2_dof=fi.chi2_dof, intensity_dof=fi.dof,
            energy_chi2_dof=fe.chi2_dof, energy_dof=fe.dof,
            mode_number=fe.shape, mode_number_oracle=oracle,
            mode_number_rel_error=abs(fe.shape - oracle) / oracle,
        )
    max_lag = cfg.max_lag if cfg.max_lag is not None else 3.0 * cfg.tau
    coh = coherence_vs_lag(acc, max_lag)
    paths.append(write_csv(out / "coherence.csv", {
        "lag": coh.lags, "g1": coh.g1, "stderr": coh.stderr,
        "g1_theory": np.abs(theoretical_g1(psd, coh.lags)),
    }, hdr))
    summary["coherence_max_deviation"] = float(
        np.nanmax(np.abs(coh.g1 - np.abs(theoretical_g1(psd, coh.lags))))
    )
    try:
        spec = energy_spectral_density(acc)
    except InsufficientSamplesError as exc:
        log.warning("field-stats: spectrum skipped (%s)", exc)
    else:
        keep = np.abs(spec.omega) <= 8.0 * combined_bandwidth(cfg.tau, psd.bandwidth)
        paths.append(write_csv(out / "spectrum.csv",
                               {"omega": spec.omega[keep], "density": spec.density[keep]}, hdr))
        summary.update(spectrum_fwhm=spec.fwhm,
                       combined_bandwidth=combined_bandwidth(cfg.tau, psd.bandwidth))
    paths.append(write_json(out / "field_stats.json", summary, hdr))
    log.info("field-stats: %d pulses, probe at t0%+.4g", cfg.n_traj, probe - env.t0)
    return paths


# -- atom commands (run in units of the natural linewidth) -------------------

def _gammas(cfg: SimulationConfig) -> list[float]:
    if cfg.gamma_values:
        return list(cfg.gamma_values)
    if cfg.sigma_omega is not None and cfg.psd_family != "none":
        return [cfg.psd().bandwidth]
    return [cfg.gamma]


def _rabis(cfg: SimulationConfig) -> list[float]:
    return list(cfg.rabi_values) or [cfg.rabi_peak]


def _fit_summary(scan, cfg: SimulationConfig) -> dict:
    try:
        fit = fit_voigt(scan, free_lorentz=cfg.free_lorentz)
    except (ValueError, RangeTooNarrowError) as exc:
        return {"error": str(exc)}
    return fit.to_dict()


def _scan_fwhm(scan):
    try:
        return scan.fwhm
    except RangeTooNarrowError:
        return None


def cmd_scan(cfg: SimulationConfig, out: Path, workers: int) -> list[Path]:
    cfg = convert_units(cfg)
    env = cfg.envelope_obj()
    det = cfg.detunings()
    hdr = _header(cfg, units="gamma2")
    paths, curves = [], []
    for g in _gammas(cfg):
        psd = cfg.psd(g)
        for rabi in _rabis(cfg):
            t = time.perf_counter()
            scan = detuning_scan(env, psd, cfg.atom(rabi_peak=rabi), det, cfg.n_traj,
                                 cfg.master_seed)
            name = f"scan_{cfg.psd_family}_g{_tag(g)}_r{_tag(rabi)}.csv"
            paths.append(scan.to_csv(out / name, hdr))
            curves.append({
                "file": name, "family": cfg.psd_family, "gamma": g, "rabi_peak": rabi,
                "fwhm": _scan_fwhm(scan),
                "combined_bandwidth": combined_bandwidth(cfg.tau, g),
                "voigt_width": voigt_width(cfg.atom().gamma21, combined_bandwidth(cfg.tau, g)),
                "voigt_fit": _fit_summary(scan, cfg),
                "diagnostics": scan.metadata["diagnostics"],
            })
            log.info("scan %s gamma=%g rabi=%g: fwhm=%s (%.1fs)", cfg.psd_family, g, rabi,
                     curves[-1]["fwhm"], time.perf_counter() - t)
    paths.append(write_json(out / "scan_summary.json", {"curves": curves}, hdr))
    return paths


def cmd_pdm_scan(cfg: SimulationConfig, out: Path, workers: int) -> list[Path]:
    cfg = convert_units(cfg)
    env = cfg.envelope_obj()
    det = cfg.detunings()
    hdr = _header(cfg, units="gamma2")
    paths, curves = [], []
    for g in _gammas(cfg):
        for rabi in _rabis(cfg):
            scan = pdm_scan(env, cfg.atom(rabi_peak=rabi), g, det)
            name = f"pdm_g{_tag(g)}_r{_tag(rabi)}.csv"
            paths.append(scan.to_csv(out / name, hdr))
            curves.append({"file": name, "gamma": g, "rabi_peak": rabi,
                           "fwhm": _scan_fwhm(scan)})
    paths.append(write_json(out / "pdm_summary.json", {"curves": curves}, hdr))
    log.info("pdm-scan: %d curves", len(curves))
    return paths


def cmd_decorr_error(cfg: SimulationConfig, out: Path, workers: int) -> list[Path]:
    cfg = convert_units(cfg)
    env = cfg.envelope_obj()
    hdr = _header(cfg, units="gamma2")
    rabis = sorted(_rabis(cfg))
    paths = []
    for family in cfg.families:
        for g in _gammas(cfg):
            psd = cfg.psd(g, family)
            if psd is None:
                raise ConfigError(["gamma_values: decorrelation error needs gamma > 0"])
            t = time.perf_counter()
            rows = decorrelation_error_curve(
                env, psd, cfg.atom(), rabis, cfg.n_traj, cfg.master_seed,
                t_probe=cfg.t_probe, correlator=cfg.correlator,
            )
            cols = {k: [r.to_row()[k] for r in rows] for k in rows[0].to_row()}
            name = f"decorr_{family}_g{_tag(g)}.csv"
            paths.append(write_csv(out / name, cols, hdr))
            log.info("decorr-error %s gamma=%g: %s%% (%.1fs)", family, g,
                     ", ".join(f"{r.rel_error_percent:.3g}" for r in rows),
                     time.perf_counter() - t)
    return paths


def cmd_fwhm_curve(cfg: SimulationConfig, out: Path, workers: int) -> list[Path]:
    cfg = convert_units(cfg)
    hdr = _header(cfg, units="gamma2")
    taus = list(cfg.tau_values) or [cfg.tau]
    family = PsdFamily(cfg.psd_family if cfg.psd_family != "none" else "gaussian")
    params = cfg.atom()
    paths, summary = [], {"pdm": [], "noise": []}
    for tau in taus:
        if cfg.gamma_values:
            pts = pdm_fwhm_curve(tau, params, cfg.gamma_values, n_points=cfg.fwhm_points)
            name = f"fwhm_pdm_tau{_tag(tau)}.csv"
            paths.append(write_csv(out / name, {
                "gamma": [p.gamma for p in pts], "delta_omega_s": [p.delta_omega_s for p in pts],
                "fwhm": [p.fwhm for p in pts],
            }, hdr))
            fit = linear_fit([p.gamma for p in pts], [p.fwhm for p in pts])
            summary["pdm"].append({"tau": tau, "file": name, **fit.to_dict()})
            log.info("fwhm-curve pdm tau=%g: slope %.4f, max residual %.2e", tau,
                     fit.slope, fit.max_rel_residual)
        if cfg.delta_omega_values:
            pts = noise_fwhm_curve(tau, params, cfg.delta_omega_values, cfg.n_traj,
                                   cfg.master_seed, family=family, n_points=cfg.fwhm_points)
            dev = [abs(p.fwhm - p.voigt_width) / p.voigt_width for p in pts]
            name = f"fwhm_noise_{family.value}_tau{_tag(tau)}.csv"
            paths.append(write_csv(out / name, {
                "delta_omega_s": [p.delta_omega_s for p in pts], "gamma": [p.gamma for p in pts],
                "fwhm": [p.fwhm for p in pts], "voigt_width": [p.voigt_width for p in pts],
                "rel_deviation": dev,
            }, hdr))
            summary["noise"].append({
                "tau": tau, "file": name, "family": family.value,
                "fourier_limit": fourier_limited_bandwidth(tau),
                "max_rel_deviation": max(dev) if dev else None,
            })
            log.info("fwhm-curve noise tau=%g: max deviation from voigt width %.2e", tau,
                     max(dev) if dev else math.nan)
    paths.append(write_json(out / "fwhm_summary.json", summary, hdr))
    return paths


COMMANDS = {
    "gen-pulses": cmd_gen_pulses,
    "field-stats": cmd_field_stats,
    "scan": cmd_scan,
    "pdm-scan": cmd_pdm_scan,
    "decorr-error": cmd_decorr_error,
    "fwhm-curve": cmd_fwhm_curve,
}


def run_command(name: str, cfg: SimulationConfig, out: Path, workers: int = 1) -> list[Path]:
    return COMMANDS[name](cfg, Path(out), workers)


# -- argument handling ---------------------------------------------------------

def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError([f"--set: expected KEY=VALUE, got {item!r}"])
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _overrides(args) -> dict:
    ov = _parse_set(args.set)
    if args.n_traj is not None:
        ov["n_traj"] = args.n_traj
    if args.seed is not None:
        ov["master_seed"] = args.seed
    return ov


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field (value parsed as JSON); repeatable")
    common.add_argument("--n-traj", type=int, help="number of pulses")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, default=1,
                        help="worker threads; results do not depend on it")
    common.add_argument("--out-dir", help=f"output directory (default ${OUTDIR_ENV} "
                                          f"or ./{DEFAULT_OUTDIR})")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="sasesim", description="Chaotic-pulse synthesis and two-level resonance studies."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen-pulses": "sample pulses and the ensemble-mean intensity",
        "field-stats": "intensity/energy histograms, coherence and spectrum",
        "scan": "ensemble yield versus detuning",
        "pdm-scan": "phase-diffusion-model yield versus detuning",
        "decorr-error": "decorrelation error versus peak Rabi frequency",
        "fwhm-curve": "linewidth versus field bandwidth",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    rep = sub.add_parser("reproduce", parents=[common], help="run a named preset")
    rep.add_argument("figure", choices=sorted(PRESETS))
    return parser


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc.strerror}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: invalid JSON ({exc})"]) from exc
    if not isinstance(data, dict):
        raise ConfigError(["<root>: config must be a JSON object"])
    return data


def _execute(args) -> list[Path]:
    if args.workers < 1:
        raise ConfigError(["--workers: must be >= 1"])
    set_workers(args.workers)
    workers = args.workers
    overrides = _overrides(args)
    out = output_dir(args.out_dir)
    if args.command != "reproduce":
        cfg = load_config(args.config, overrides)
        return run_command(args.command, cfg, out, workers)
    preset = PRESETS[args.figure]
    paths = []
    for command, extra, subdir in preset["runs"]:
        base = dict(preset["config"])
        if args.config:
            base.update(_read_json(args.config))
        cfg = load_config(None, {**base, **extra, **overrides})
        target = out / args.figure / subdir if subdir else out / args.figure
        paths += run_command(command, cfg, target, workers)
    return paths


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    t = time.perf_counter()
    try:
        paths = _execute(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDiagnosticError as exc:
        print(f"numerical diagnostic abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    log.info("done: %d files in %.1fs", len(paths), time.perf_counter() - t)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
