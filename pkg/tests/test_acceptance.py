"""End-to-end acceptance criteria, one test per criterion.

Every test records a single PASS/FAIL line (shown in the terminal summary)
and then asserts the verdict. All runs use one master seed fixed up front.
Run alone with ``python3 -m pytest tests/test_acceptance.py -m acceptance``.
"""
from __future__ import annotations

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.special import wofz

from conftest import COHERENCE_TOL, DRIFT_TOL, MONOTONE_TOL, POPULATION_TOL
from sasesim import _kernels
from sasesim.atomsolver import (
    AtomParams,
    PulseEnsemble,
    conservation_log,
    detuning_scan,
    propagate_trajectory,
)
from sasesim.config import GAMMA2_KR
from sasesim.decorr import decorrelation_error_curve, pdm_scan
from sasesim.fieldstats import (
    accumulate_ensemble,
    coherence_vs_lag,
    energy_spectral_density,
    fit_energy_distribution,
    fit_intensity_distribution,
    mode_number,
)
from sasesim.io import data_payload
from sasesim.lineshape import fit_voigt
from sasesim.noisegen import PowerSpectralDensity, PsdFamily
from sasesim.pulse import (
    GaussianEnvelope,
    combined_bandwidth,
    fourier_limited_bandwidth,
    fourier_limited_pulse,
    grid_for,
)
from sasesim.workflows import linear_fit, noise_fwhm_curve, pdm_fwhm_curve

pytestmark = pytest.mark.acceptance

SEED = 12345
GAUSS = PsdFamily.GAUSSIAN
LORENTZ = PsdFamily.LORENTZIAN


@pytest.fixture(scope="module")
def fig3_ensemble():
    # tau = 10 fs, sigma_omega = 0.25 rad/fs, 1000 pulses, probe at t0 + tau/2
    env = GaussianEnvelope.centered(10.0)
    psd = PowerSpectralDensity(GAUSS, 0.25)
    grid = grid_for(env, psd, GAMMA2_KR)
    probe = env.t0 + round(5.0 / grid.dt) * grid.dt
    t = time.perf_counter()
    acc = accumulate_ensemble(env, psd, 1000, SEED, grid=grid, probe_times=[probe])
    return env, psd, acc, probe, time.perf_counter() - t


def test_criterion_01_coherence(fig3_ensemble, acceptance_report):
    env, psd, acc, _, elapsed = fig3_ensemble
    t = time.perf_counter()
    curve = coherence_vs_lag(acc, 8.0)
    elapsed += time.perf_counter() - t
    theory = np.exp(-0.5 * (psd.sigma_omega * curve.lags) ** 2)
    dev = float(np.nanmax(np.abs(curve.g1 - theory)))
    dt = acc.times[1] - acc.times[0]
    # every grid lag in [0, 8] fs is compared
    ok = dev < 0.05 and curve.lags[-1] > 8.0 - dt and elapsed < 60.0
    assert acceptance_report(
        1, ok, f"max |g1 - exp(-s^2 dt^2/2)| = {dev:.4f} over [0, 8] fs (< 0.05); {elapsed:.1f}s")


def test_criterion_02_chaotic_statistics(fig3_ensemble, acceptance_report):
    env, psd, acc, probe, _ = fig3_ensemble
    fi = fit_intensity_distribution(acc, probe)
    fe = fit_energy_distribution(acc)
    oracle = mode_number(env, psd)
    rel = abs(fe.shape - oracle) / oracle
    ok = fi.chi2_dof < 2.0 and fe.chi2_dof < 2.0 and rel < 0.2
    assert acceptance_report(
        2, ok, f"intensity chi2/dof {fi.chi2_dof:.3f}; energy chi2/dof {fe.chi2_dof:.3f}; "
               f"M {fe.shape:.3f} vs quadrature {oracle:.3f} ({100 * rel:.1f}%, < 20%)")


def test_criterion_03_spectrum_width(acceptance_report):
    env = GaussianEnvelope.centered(10.0)
    dmin = fourier_limited_bandwidth(10.0)
    parts, ok = [], True
    for ratio in (0.2, 1.0, 5.0):
        psd = PowerSpectralDensity.from_bandwidth(GAUSS, ratio * dmin)
        spec = energy_spectral_density(accumulate_ensemble(env, psd, 500, SEED))
        expect = combined_bandwidth(10.0, psd.bandwidth)
        rel = spec.fwhm / expect - 1.0
        ok &= abs(rel) < 0.05
        parts.append(f"{ratio:g}: {100 * rel:+.2f}%")
    assert acceptance_report(3, ok, "spectrum FWHM vs combined bandwidth " + ", ".join(parts)
                                    + " (within 5%)")


def _double_quadrature_yield(rabi, tau, gamma, det, h=0.01):
    # Q = 2 Re int dt Omega(t) int_0^t dt' Omega(t') exp(alpha (t - t')), trapezoid in both
    t = np.arange(0.0, 10.0 * tau + 0.5 * h, h)
    om = rabi * np.exp(-0.5 * ((t - 5.0 * tau) / tau) ** 2)
    alpha = complex(-0.5 * gamma, det)
    inner = np.empty(t.size, dtype=complex)
    for s in range(0, t.size, 200):
        i = np.arange(s, min(s + 200, t.size))
        lag = t[i, None] - t[None, :]
        w = np.where(lag >= 0, h, 0.0)
        w[:, 0] *= 0.5
        w[np.arange(i.size), i] *= 0.5
        w[i == 0, 0] = 0.0
        inner[i] = (w * np.exp(alpha * np.where(lag >= 0, lag, 0.0))) @ om
    wt = np.full(t.size, h)
    wt[0] = wt[-1] = 0.5 * h
    return 2.0 * float(np.sum(wt * om * inner).real)


def test_criterion_05_perturbative_oracle(acceptance_report):
    env = GaussianEnvelope.centered(20.0)
    p = fourier_limited_pulse(grid_for(env, None, 1.0).times, env)
    parts, ok = [], True
    for det in (0.0, 1.0, 5.0):
        oracle = _double_quadrature_yield(1e-2, 20.0, 1.0, det)
        closed = 2.0 * math.pi * 1e-4 * 400.0 * wofz(20.0 * det + 10.0j).real
        # the two oracle routes must agree before either is trusted
        assert oracle == pytest.approx(closed, rel=1e-3)
        q = propagate_trajectory(p, AtomParams(1e-2, det)).final_yield
        rel = q / oracle - 1.0
        ok &= abs(rel) < 0.01
        parts.append(f"D={det:g}: {100 * rel:+.3f}%")
    assert acceptance_report(5, ok, "weak-field yield vs double quadrature " + ", ".join(parts)
                                    + " (within 1%)")


def test_criterion_06_pdm_equivalence(acceptance_report):
    env = GaussianEnvelope.centered(3.0)
    params = AtomParams(1e-2)
    det = np.arange(41) * 0.25
    t = time.perf_counter()
    parts, ok = [], True
    for gamma in (1.11, 3.33, 6.67):
        psd = PowerSpectralDensity.from_bandwidth(LORENTZ, gamma)
        ens = detuning_scan(env, psd, params, det, 2000, SEED)
        pdm = pdm_scan(env, params, gamma, det)
        within = np.abs(ens.yields - pdm.yields) <= 2.0 * ens.stderrs
        frac = float(within.mean())
        ok &= frac >= 0.9
        parts.append(f"g={gamma:g}: {100 * frac:.0f}%")
    elapsed = time.perf_counter() - t
    ok &= elapsed < 900.0
    assert acceptance_report(
        6, ok, "points within 2 se of PDM " + ", ".join(parts) + f" (>= 90%); {elapsed:.0f}s")


def test_criterion_07_gaussian_noise_follows_voigt(acceptance_report):
    params = AtomParams(1e-2)
    parts, ok = [], True
    for tau in (3.0, 20.0):
        pdm = pdm_fwhm_curve(tau, params, [1.0, 2.0, 4.0, 6.67, 10.0, 13.33])
        fit = linear_fit([p.gamma for p in pdm], [p.fwhm for p in pdm])
        noise = noise_fwhm_curve(tau, params, [0.5, 0.6, 1.0, 2.0, 4.0, 8.0, 16.0], 2000, SEED)
        dev = max(abs(p.fwhm / p.voigt_width - 1.0) for p in noise)
        span = (min(p.delta_omega_s for p in noise), max(p.delta_omega_s for p in noise))
        ok &= fit.max_rel_residual < 0.02 and dev < 0.05
        parts.append(f"tau={tau:g}: PDM linear residual {100 * fit.max_rel_residual:.2f}%, "
                     f"noise vs Voigt {100 * dev:.2f}% on dw in [{span[0]:g}, {span[1]:g}]")
    assert acceptance_report(7, ok, "; ".join(parts) + " (< 2%, < 5%)")


def test_criterion_08_experiment(acceptance_report):
    env = GaussianEnvelope.centered(20.0)
    psd = PowerSpectralDensity.from_bandwidth(GAUSS, 0.72)
    t = time.perf_counter()
    scan = detuning_scan(env, psd, AtomParams(1e-2), np.arange(61) * 0.05, 2000, SEED)
    elapsed = time.perf_counter() - t
    width = scan.fwhm
    fit = fit_voigt(scan)
    ok = 1.33 <= width <= 1.43 and 1.30 <= fit.gamma_voigt <= 1.45 and elapsed < 600.0
    assert acceptance_report(
        8, ok, f"FWHM {width:.4f} (1.38 +- 0.05); Voigt fit {fit.gamma_voigt:.4f} "
               f"([1.30, 1.45]); {elapsed:.0f}s")


def _errors(family, gamma, rabis):
    env = GaussianEnvelope.centered(3.0)
    psd = PowerSpectralDensity.from_bandwidth(family, gamma)
    out = decorrelation_error_curve(env, psd, AtomParams(detuning=0.0), rabis, 5000, SEED)
    return {r.rabi_peak: r.rel_error_percent for r in out}


def test_criterion_09_decorrelation_error(acceptance_report):
    parts, ok = [], True
    for family in (GAUSS, LORENTZ):
        e667 = _errors(family, 6.67, [1e-3, 0.1, 1.0])
        e111 = _errors(family, 1.11, [0.1])
        order = e667[1e-3] < e667[1.0] and e111[0.1] > e667[0.1]
        # every sampled point with gamma >= 10 max(Omega0, G2)
        valid = {(g, r): e for g in (10.0, 13.33)
                 for r, e in _errors(family, g, [1e-3, 1e-2, 0.1, 1.0]).items()}
        small = all(e < 5.0 for e in valid.values())
        ok &= order and small
        worst = ", ".join(
            f"g={g:g} {max(e for (gg, _), e in valid.items() if gg == g):.2f}%"
            for g in (10.0, 13.33))
        parts.append(
            f"{family.value}: err(1e-3) {e667[1e-3]:.3f}% < err(1) {e667[1.0]:.2f}%, "
            f"err(g=1.11) {e111[0.1]:.2f}% > err(g=6.67) {e667[0.1]:.2f}% at 0.1; "
            f"max valid-regime err {worst}")
    assert acceptance_report(9, ok, "; ".join(parts) + " (< 5%)")


def _cli(args, out_dir, workers):
    env = {**os.environ, "SASESIM_OUTDIR": str(out_dir)}
    proc = subprocess.run([sys.executable, "-m", "sasesim.cli", *args, "--workers", str(workers)],
                          env=env, capture_output=True, text=True, timeout=3600)
    assert proc.returncode == 0, proc.stderr
    return sorted(p.relative_to(out_dir) for p in out_dir.rglob("*") if p.is_file())


def test_criterion_10_determinism(tmp_path, acceptance_report):
    parts, ok = [], True
    for preset in ("fig4", "exp"):
        a, b = tmp_path / f"{preset}_1", tmp_path / f"{preset}_3"
        files_a = _cli(["reproduce", preset, "--seed", str(SEED)], a, 1)
        files_b = _cli(["reproduce", preset, "--seed", str(SEED)], b, 3)
        same = files_a == files_b and all(
            data_payload(a / f) == data_payload(b / f) for f in files_a)
        ok &= same and bool(files_a)
        parts.append(f"{preset}: {len(files_a)} files {'identical' if same else 'DIFFER'}")
    assert acceptance_report(10, ok, "workers 1 vs 3, " + ", ".join(parts))


def test_criterion_04_conservation(acceptance_report):
    # dedicated sweep over field strength, noise family and coherence decay, then
    # every propagation logged in this session (including the criteria above)
    env = GaussianEnvelope.centered(3.0)
    n_traj, worst = 0, [0.0, 0.0, 0.0, 0.0]
    for family in (GAUSS, LORENTZ):
        for gamma in (1.11, 6.67):
            ens = PulseEnsemble(env, PowerSpectralDensity.from_bandwidth(family, gamma), 1.0)
            for rabi in (1e-3, 0.1, 1.0, 3.0):
                om, mid = next(ens.rabi_chunks(rabi, ens.seeds(SEED, 64)))
                for g21 in (1.0, 2.0):
                    s11, s22, s12, q = _kernels.trajectories(om, mid, ens.dt, ens.n_steps,
                                                             0.7, 1.0, g21)
                    n_traj += s11.shape[0]
                    worst[0] = max(worst[0], np.abs(s11 + s22 + q - 1.0).max())
                    worst[1] = min(worst[1], np.diff(q, axis=1).min())
                    worst[2] = max(worst[2], (np.abs(s12) ** 2 - s11 * s22).max())
                    worst[3] = min(worst[3], s11.min(), s22.min())
    logged = [s for s in conservation_log if s.get("n_runs", 0)]
    runs = sum(s["n_runs"] for s in logged)
    if logged:
        worst[0] = max(worst[0], max(s["max_drift"] for s in logged))
        worst[1] = min(worst[1], min(s["min_dq"] for s in logged))
        worst[2] = max(worst[2], max(s["max_coherence_excess"] for s in logged))
        worst[3] = min(worst[3], min(s["min_population"] for s in logged))
    ok = (worst[0] <= DRIFT_TOL and worst[1] >= MONOTONE_TOL
          and worst[2] <= COHERENCE_TOL and worst[3] >= POPULATION_TOL)
    assert acceptance_report(
        4, ok, f"{n_traj} sweep trajectories + {runs} logged propagations: drift "
               f"{worst[0]:.1e} (<= 1e-8), min dQ2 {worst[1]:.1e}, coherence excess "
               f"{worst[2]:.1e}, min population {worst[3]:.1e}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
