"""Phase-diffusion model (PDM) and the atom-field decorrelation diagnostic.

The excited-state equation depends on the atom-field correlation

    lambda(t) = int_0^t dt' exp(alpha (t - t')) <Omega*(t) Omega(t') n(t')>,

with ``alpha = i Delta - G21/2`` and ``n = s22 - s11``. Decorrelation replaces
the average by ``<Omega*(t) Omega(t')> <n(t')>``. For exponentially correlated
fields the factorized dynamics equal a deterministic pulse with
``G21 -> G21 + gamma``, which is what :func:`pdm_yield` integrates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._accel import resolve_backend
from .atomsolver import AtomParams, PulseEnsemble, _check_resolution, _summarize
from .lineshape import LineshapeScan
from .noisegen import PowerSpectralDensity, PsdFamily, theoretical_g1
from .pulse import Envelope, grid_for

__all__ = [
    "LambdaEstimate",
    "pdm_params",
    "pdm_yield",
    "pdm_scan",
    "estimate_lambda",
    "decorrelation_error_curve",
    "factorized_lambda",
    "absorbed_lambda",
]

LAMBDA_FLOOR = 1e-300


def pdm_params(params: AtomParams, gamma: float) -> AtomParams:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return params.replace(gamma21=params.gamma21 + gamma)


def _pdm_ensemble(env: Envelope, params: AtomParams, gamma: float, grid=None) -> PulseEnsemble:
    # the PDM coherence decays at (G21 + gamma)/2; size the grid as for
    # exponentially correlated noise of the same bandwidth
    psd = PowerSpectralDensity.from_bandwidth(PsdFamily.LORENTZIAN, gamma) if gamma > 0 else None
    if grid is None:
        grid = grid_for(env, psd, params.gamma2)
    return PulseEnsemble(env, None, params.gamma2, grid)


def pdm_scan(env: Envelope, params: AtomParams, gamma: float, detunings, *,
             grid=None, backend: str | None = None) -> LineshapeScan:
    """Deterministic PDM yield versus detuning."""
    backend = resolve_backend(backend)
    detunings = np.asarray(detunings, dtype=float)
    p = pdm_params(params, gamma)
    ens = _pdm_ensemble(env, params, gamma, grid)
    omega, omega_mid = next(ens.rabi_chunks(p.rabi_peak, [0]))
    _check_resolution(omega, omega_mid, ens.dt, "pdm")
    q, diag = _kernels.final_yield(
        omega, omega_mid, ens.dt, ens.n_steps, detunings, p.gamma2, p.gamma21, backend
    )
    summary = _summarize(diag, "pdm")
    meta = {"model": "pdm", "gamma": gamma, "gamma2": p.gamma2, "gamma21": params.gamma21,
            "rabi_peak": p.rabi_peak, "diagnostics": summary, **ens.metadata()}
    return LineshapeScan(detunings, q[0], np.zeros(detunings.size), meta,
                         half=bool(detunings[0] == 0.0))


def pdm_yield(env: Envelope, params: AtomParams, gamma: float, *, grid=None,
              backend: str | None = None) -> float:
    scan = pdm_scan(env, params, gamma, [params.detuning], grid=grid, backend=backend)
    return float(scan.yields[0])


@dataclass
class LambdaEstimate:
    t: float
    rabi_peak: float
    lambda_full: complex
    lambda_full_stderr: float
    lambda_decorrelated: complex
    lambda_decorrelated_stderr: float
    rel_error_percent: float
    rel_error_stderr: float
    n_traj: int
    correlator: str = "empirical"
    flagged: bool = False

    def to_row(self) -> dict:
        return {
            "rabi_peak": self.rabi_peak,
            "error_percent": self.rel_error_percent,
            "stderr": self.rel_error_stderr,
            "re_lambda": self.lambda_full.real,
            "im_lambda": self.lambda_full.imag,
            "re_lambda_decorrelated": self.lambda_decorrelated.real,
            "im_lambda_decorrelated": self.lambda_decorrelated.imag,
        }


def _trapezoid_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n, dt)
    if n:
        w[0] *= 0.5
        w[-1] *= 0.5
    if n == 1:
        w[0] = 0.0
    return w


def _kernel_weights(times: np.ndarray, t: float, params: AtomParams) -> np.ndarray:
    alpha = complex(-0.5 * params.gamma21, params.detuning)
    dt = times[1] - times[0]
    return _trapezoid_weights(times.size, dt) * np.exp(alpha * (t - times))


def factorized_lambda(times, t, params, correlation, population):
    """``int_0^t dt' exp(alpha (t-t')) G(t, t') n(t')`` by the trapezoid rule.

    ``correlation`` holds ``<Omega*(t) Omega(t')>`` on ``times``.
    """
    return complex(np.sum(_kernel_weights(times, t, params) * correlation * population))


def absorbed_lambda(times, t, params, gamma, mean_rabi_sq, population):
    """Same integral for exponential correlations with ``gamma`` moved into alpha.

    ``mean_rabi_sq`` is ``<|Omega(t')|^2>`` on ``times``; the last entry is at ``t``.
    """
    p = params.replace(gamma21=params.gamma21 + gamma)
    amp = np.sqrt(mean_rabi_sq * mean_rabi_sq[-1])
    return complex(np.sum(_kernel_weights(times, t, p) * amp * population))


def _probe_index(dt: float, t_probe: float) -> int:
    j = int(round(t_probe / dt))
    if abs(j * dt - t_probe) > 1e-6 * max(dt, abs(t_probe)):
        raise ValueError("t_probe is not on the time grid")
    return j


def _lambda_stats(x: np.ndarray, y: np.ndarray, t, rabi, correlator, n):
    lam = complex(x.mean())
    lam_t = complex(y.mean())
    sq = math.sqrt(n)
    err_x = float(np.sqrt(np.var(x.real, ddof=1) + np.var(x.imag, ddof=1)) / sq)
    err_y = float(np.sqrt(np.var(y.real, ddof=1) + np.var(y.imag, ddof=1)) / sq)
    d = x - y
    err_d = float(np.sqrt(np.var(d.real, ddof=1) + np.var(d.imag, ddof=1)) / sq)
    flagged = not (abs(lam) > LAMBDA_FLOOR and math.isfinite(abs(lam)))
    if flagged:
        rel, rel_err = float("nan"), float("nan")
    else:
        rel = 100.0 * abs(lam - lam_t) / abs(lam)
        rel_err = 100.0 * err_d / abs(lam)
    return LambdaEstimate(t, rabi, lam, err_x, lam_t, err_y, rel, rel_err, n, correlator, flagged)


def decorrelation_error_curve(
    env: Envelope,
    psd: PowerSpectralDensity,
    params_base: AtomParams,
    rabi_values,
    n_traj: int,
    master_seed: int,
    *,
    t_probe: float | None = None,
    correlator: str = "empirical",
    freeze_population: bool = False,
    backend: str | None = None,
    chunk: int = 512,
) -> list[LambdaEstimate]:
    """Decorrelation error at ``t_probe`` for each peak Rabi frequency.

    All points share one pulse set. ``correlator="empirical"`` factorizes
    with the field correlator measured on that set; ``"analytic"`` uses the
    PSD's closed-form ``g1``. ``freeze_population`` replaces ``n(t)`` by -1
    (test hook for the exactly factorizable case).
    """
    if correlator not in ("empirical", "analytic"):
        raise ValueError("correlator must be 'empirical' or 'analytic'")
    rabi_values = np.asarray(rabi_values, dtype=float)
    if np.any(rabi_values <= 0) or np.any(np.diff(rabi_values) < 0):
        raise ValueError("rabi_values must be positive and sorted")
    if n_traj < 2:
        raise ValueError("n_traj must be >= 2")
    backend = resolve_backend(backend)
    if t_probe is None:
        t_probe = env.t0
    grid = grid_for(env, psd, params_base.gamma2)
    jp = _probe_index(grid.dt, t_probe)
    ens = PulseEnsemble(env, psd, params_base.gamma2, grid, n_steps=jp)
    seeds = ens.seeds(master_seed, n_traj)
    parts = list(ens.zeta_chunks(seeds, chunk))
    zeta = np.concatenate([z for z, _ in parts], axis=0)
    zeta_mid = np.concatenate([zm for _, zm in parts], axis=0)
    del parts
    times = ens.times
    kw = _kernel_weights(times, t_probe, params_base)
    amp = ens.amplitude
    # unit-rabi products conj(w(t)) w(t') exp(alpha (t - t')) dt', shape (n_traj, jp + 1)
    base = np.conj(amp[-1] * zeta[:, -1:]) * (amp * zeta) * kw
    if correlator == "analytic":
        g = amp[-1] * amp * theoretical_g1(psd, t_probe - times) * kw

    out = []
    for rabi in rabi_values:
        if freeze_population:
            n = -np.ones((n_traj, jp + 1))
        else:
            n = np.empty((n_traj, jp + 1))
            for s in range(0, n_traj, chunk):
                om = rabi * amp * zeta[s:s + chunk]
                om_mid = rabi * ens.amplitude_mid * zeta_mid[s:s + chunk]
                _check_resolution(om, om_mid, ens.dt, "decorrelation")
                s11, s22, s12, q = _kernels.trajectories(
                    om, om_mid, ens.dt, jp, params_base.detuning, params_base.gamma2,
                    params_base.gamma21, backend,
                )
                d = np.abs(s11 + s22 + q - 1.0).max(axis=1)
                dq = np.diff(q, axis=1).min(axis=1) if jp else np.zeros(len(q))
                coh = (np.abs(s12) ** 2 - s11 * s22).max(axis=1)
                pos = np.minimum(s11.min(axis=1), s22.min(axis=1))
                _summarize(np.stack([d, dq, coh, pos], axis=-1), "decorrelation")
                n[s:s + chunk] = s22 - s11
        r2 = rabi * rabi
        x = r2 * np.sum(base * n, axis=1)
        n_mean = n.mean(axis=0)
        if correlator == "empirical":
            y = r2 * (base @ n_mean)
        else:
            y = np.full(n_traj, r2 * np.sum(g * n_mean), dtype=complex)
            # propagate the Monte Carlo noise of <n> into the factorized estimate
            y = y + r2 * ((n - n_mean) @ g)
        out.append(_lambda_stats(x, y, float(times[-1]), float(rabi), correlator, n_traj))
    return out


def estimate_lambda(
    env: Envelope,
    psd: PowerSpectralDensity,
    params: AtomParams,
    t_probe: float | None = None,
    n_traj: int = 5000,
    master_seed: int = 0,
    **kw,
) -> LambdaEstimate:
    return decorrelation_error_curve(
        env, psd, params, [params.rabi_peak], n_traj, master_seed, t_probe=t_probe, **kw
    )[0]
