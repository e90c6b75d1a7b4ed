"""Stochastic two-level (resonant-Auger) system driven by chaotic pulses.

Rotating-frame equations integrated per pulse, with ``Omega(t)`` the complex
Rabi series and ``n = s22 - s11``::

    ds11/dt = 2 Im[Omega* s12]
    ds22/dt = -G2 s22 - 2 Im[Omega* s12]
    ds12/dt = (i Delta - G21/2) s12 + i Omega n
    dQ2/dt  = G2 s22

Each step is a fourth-order commutator-free Magnus step: two exact
propagations with constant effective Rabi frequencies built from the drive at
the step ends and at its exact half-step value. Every factor is the flow of a
valid Lindblad generator, so positivity and monotone ``Q2`` hold to rounding.
Integration stops at the envelope end time ``T_f``; whatever excited
population remains there decays without further driving, so
``Q2(inf) = Q2(T_f) + s22(T_f)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import _kernels
from ._accel import resolve_backend
from .lineshape import LineshapeScan
from .noisegen import FrequencyGrid, PowerSpectralDensity, noise_batch, trajectory_seed
from .pulse import (
    Envelope,
    PulseRealization,
    grid_for,
    integration_steps,
)

__all__ = [
    "AtomParams",
    "TlsTrajectory",
    "EnsembleYield",
    "NumericalDiagnosticError",
    "PulseEnsemble",
    "rabi_series",
    "rabi_midpoints",
    "propagate_trajectory",
    "ensemble_yield",
    "detuning_scan",
    "conservation_log",
]

DRIFT_ABORT = 1e-6
# Largest Rabi phase |Omega| dt per step; beyond ~2 rad the step loses accuracy.
MAX_RABI_PHASE = 1.0
DEFAULT_CHUNK = 256

# Worst-case diagnostics of every propagation run in this process.
conservation_log: list[dict] = []


class NumericalDiagnosticError(RuntimeError):
    """Time grid too coarse for the drive, or conservation drift beyond tolerance."""


@dataclass(frozen=True)
class AtomParams:
    rabi_peak: float = 0.0
    detuning: float = 0.0
    gamma2: float = 1.0
    gamma21: float | None = None

    def __post_init__(self):
        if self.gamma21 is None:
            object.__setattr__(self, "gamma21", self.gamma2)
        if not self.gamma2 > 0:
            raise ValueError("gamma2 must be positive")
        if self.gamma21 < self.gamma2:
            raise ValueError("gamma21 must be >= gamma2")
        if self.rabi_peak < 0:
            raise ValueError("rabi_peak must be non-negative")

    def replace(self, **kw) -> "AtomParams":
        return replace(self, **kw)


@dataclass
class TlsTrajectory:
    times: np.ndarray
    sigma11: np.ndarray
    sigma22: np.ndarray
    sigma12: np.ndarray
    q2: np.ndarray
    final_yield: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def population_difference(self) -> np.ndarray:
        return self.sigma22 - self.sigma11


@dataclass
class EnsembleYield:
    mean: float
    stderr: float
    yields: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_traj(self) -> int:
        return self.yields.size


def _summarize(diag: np.ndarray, label: str) -> dict:
    d = diag.reshape(-1, _kernels.N_DIAG)
    summary = {
        "label": label,
        "n_runs": int(d.shape[0]),
        "max_drift": float(d[:, 0].max()),
        "min_dq": float(d[:, 1].min()),
        "max_coherence_excess": float(d[:, 2].max()),
        "min_population": float(d[:, 3].min()),
    }
    conservation_log.append(summary)
    if not summary["max_drift"] <= DRIFT_ABORT:
        raise NumericalDiagnosticError(
            f"{label}: conservation drift {summary['max_drift']:.3e} exceeds "
            f"{DRIFT_ABORT:.0e}; refine the time grid"
        )
    return summary


def _check_resolution(omega: np.ndarray, omega_mid: np.ndarray | None, dt: float,
                      label: str) -> None:
    peak = np.abs(omega).max(initial=0.0)
    if omega_mid is not None:
        peak = max(peak, np.abs(omega_mid).max(initial=0.0))
    if not peak * dt <= MAX_RABI_PHASE:
        raise NumericalDiagnosticError(
            f"{label}: Rabi phase per step {peak * dt:.3g} exceeds {MAX_RABI_PHASE}; "
            "refine the time grid"
        )


def _merge_summaries(parts: list[dict], label: str) -> dict:
    if not parts:
        return {"label": label, "n_runs": 0}
    return {
        "label": label,
        "n_runs": sum(p["n_runs"] for p in parts),
        "max_drift": max(p["max_drift"] for p in parts),
        "min_dq": min(p["min_dq"] for p in parts),
        "max_coherence_excess": max(p["max_coherence_excess"] for p in parts),
        "min_population": min(p["min_population"] for p in parts),
    }


def rabi_series(p: PulseRealization, params: AtomParams) -> np.ndarray:
    """``Omega(t) = Omega0 sqrt(f(t)) zeta(t)``, recovered from the pulse field."""
    i0 = p.envelope.peak_intensity
    if i0 == 0:
        return np.zeros_like(p.field)
    return params.rabi_peak * p.field / math.sqrt(i0)


def rabi_midpoints(p: PulseRealization, params: AtomParams) -> np.ndarray | None:
    """Rabi series at ``t_j + dt/2``, or ``None`` if the pulse carries no midpoints."""
    if p.midpoint_field is None:
        return None
    i0 = p.envelope.peak_intensity
    if i0 == 0:
        return np.zeros_like(p.midpoint_field)
    return params.rabi_peak * p.midpoint_field / math.sqrt(i0)


def propagate_trajectory(
    p: PulseRealization, params: AtomParams, *, backend: str | None = None,
    n_steps: int | None = None,
) -> TlsTrajectory:
    backend = resolve_backend(backend)
    dt = p.dt
    if n_steps is None:
        n_steps = integration_steps(dt, p.envelope)
    if n_steps > p.times.size - 1:
        raise ValueError("pulse grid ends before the integration end time")
    omega = rabi_series(p, params)[None, : n_steps + 1]
    mid = rabi_midpoints(p, params)
    if mid is not None:
        mid = mid[None, :n_steps]
    _check_resolution(omega, mid, dt, "trajectory")
    s11, s22, s12, q = _kernels.trajectories(
        omega, mid, dt, n_steps, params.detuning, params.gamma2, params.gamma21, backend
    )
    s11, s22, s12, q = s11[0], s22[0], s12[0], q[0]
    drift = np.abs(s11 + s22 + q - 1.0)
    diag = np.array([
        drift.max(),
        np.diff(q).min() if n_steps else 0.0,
        (np.abs(s12) ** 2 - s11 * s22).max(),
        min(s11.min(), s22.min()),
    ])
    summary = _summarize(diag, "trajectory")
    return TlsTrajectory(
        p.times[: n_steps + 1], s11, s22, s12, q, float(q[-1] + s22[-1]), summary
    )


class PulseEnsemble:
    """Reproducible stream of Rabi series for an ensemble of pulses.

    Trajectory ``i`` always uses the noise seeded by ``(master_seed, i)``, so any
    chunking or ordering gives identical series. ``psd=None`` gives
    Fourier-limited pulses (``zeta = 1``). Series come in pairs: node values
    of length ``n_steps + 1`` and half-step values of length ``n_steps``.
    """

    def __init__(
        self,
        env: Envelope,
        psd: PowerSpectralDensity | None,
        gamma2: float = 1.0,
        grid: FrequencyGrid | None = None,
        n_steps: int | None = None,
    ):
        self.env = env
        self.psd = psd
        self.grid = grid if grid is not None else grid_for(env, psd, gamma2)
        if psd is not None:
            self.grid.check_psd(psd)
        self.dt = self.grid.dt
        self.n_steps = integration_steps(self.dt, env) if n_steps is None else n_steps
        if self.n_steps > self.grid.n_points - 1:
            raise ValueError("time grid shorter than the integration range")
        self.times = self.grid.times[: self.n_steps + 1]
        self.amplitude = np.sqrt(env(self.times))
        self.amplitude_mid = np.sqrt(env(self.times[:-1] + 0.5 * self.dt))

    def metadata(self) -> dict:
        meta = {
            "n_points": self.grid.n_points,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "t_final": float(self.times[-1]),
        }
        if self.psd is not None:
            meta["psd_family"] = self.psd.family.value
            meta["sigma_omega"] = self.psd.sigma_omega
            meta["captured_mass"] = self.grid.captured_mass(self.psd)
        return meta

    def seeds(self, master_seed: int, n_traj: int) -> list[int]:
        return [trajectory_seed(master_seed, i) for i in range(n_traj)]

    def zeta_chunks(
        self, seeds: Sequence[int], chunk: int = DEFAULT_CHUNK
    ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        k = self.n_steps
        for s in range(0, len(seeds), chunk):
            part = seeds[s:s + chunk]
            if self.psd is None:
                one = np.ones((len(part), k + 1), dtype=complex)
                yield one, one[:, :k]
            else:
                z, zm = noise_batch(self.psd, self.grid, part, midpoints=True)
                yield z[:, : k + 1], zm[:, :k]

    def rabi_chunks(
        self, rabi_peak: float, seeds: Sequence[int], chunk: int = DEFAULT_CHUNK
    ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for zeta, zeta_mid in self.zeta_chunks(seeds, chunk):
            yield rabi_peak * self.amplitude * zeta, rabi_peak * self.amplitude_mid * zeta_mid


def _ensemble_yields(
    ens: PulseEnsemble, params: AtomParams, detunings: np.ndarray, seeds: Sequence[int],
    backend: str, label: str, chunk: int = DEFAULT_CHUNK,
) -> tuple[np.ndarray, dict]:
    out = np.empty((len(seeds), detunings.size))
    summaries = []
    row = 0
    for omega, omega_mid in ens.rabi_chunks(params.rabi_peak, seeds, chunk):
        _check_resolution(omega, omega_mid, ens.dt, label)
        q, diag = _kernels.final_yield(
            omega, omega_mid, ens.dt, ens.n_steps, detunings, params.gamma2, params.gamma21, backend
        )
        out[row:row + q.shape[0]] = q
        row += q.shape[0]
        summaries.append(_summarize(diag, label))
    return out, _merge_summaries(summaries, label)


def _mean_stderr(values: np.ndarray, axis=0):
    n = values.shape[axis]
    mean = values.mean(axis=axis)
    if n < 2:
        return mean, np.zeros_like(mean)
    # spread about the first sample: identical samples give exactly zero
    first = np.take(values, [0], axis=axis)
    return mean, (values - first).std(axis=axis, ddof=1) / math.sqrt(n)


def ensemble_yield(
    env: Envelope,
    psd: PowerSpectralDensity | None,
    params: AtomParams,
    n_traj: int,
    master_seed: int,
    *,
    seeds: Sequence[int] | None = None,
    grid: FrequencyGrid | None = None,
    backend: str | None = None,
) -> EnsembleYield:
    """Mean and standard error of the final yield over ``n_traj`` pulses.

    ``seeds`` overrides the per-trajectory seeds (test hook).
    """
    if n_traj < 2:
        raise ValueError("n_traj must be >= 2")
    backend = resolve_backend(backend)
    ens = PulseEnsemble(env, psd, params.gamma2, grid)
    if seeds is None:
        seeds = ens.seeds(master_seed, n_traj)
    q, summary = _ensemble_yields(
        ens, params, np.array([params.detuning]), seeds, backend, "ensemble_yield"
    )
    mean, err = _mean_stderr(q[:, 0])
    return EnsembleYield(float(mean), float(err), q[:, 0], {**summary, **ens.metadata()})


def detuning_scan(
    env: Envelope,
    psd: PowerSpectralDensity | None,
    params_base: AtomParams,
    detunings,
    n_traj: int,
    master_seed: int,
    *,
    grid: FrequencyGrid | None = None,
    backend: str | None = None,
    return_samples: bool = False,
):
    """Mean yield versus detuning; one pulse set is reused for every detuning.

    Returns a :class:`LineshapeScan` (and the per-trajectory yield matrix when
    ``return_samples`` is set).
    """
    detunings = np.asarray(detunings, dtype=float)
    if detunings.size == 0:
        raise ValueError("detunings must be non-empty")
    if np.any(np.diff(detunings) <= 0):
        raise ValueError("detunings must be sorted and distinct")
    backend = resolve_backend(backend)
    ens = PulseEnsemble(env, psd, params_base.gamma2, grid)
    seeds = ens.seeds(master_seed, n_traj)
    q, summary = _ensemble_yields(ens, params_base, detunings, seeds, backend, "detuning_scan")
    mean, err = _mean_stderr(q)
    meta = {
        "gamma2": params_base.gamma2,
        "gamma21": params_base.gamma21,
        "rabi_peak": params_base.rabi_peak,
        "n_traj": n_traj,
        "master_seed": master_seed,
        "common_random_numbers": True,
        "diagnostics": summary,
        **ens.metadata(),
    }
    scan = LineshapeScan(detunings, mean, err, meta,
                         half=bool(detunings[0] == 0.0))
    return (scan, q) if return_samples else scan
