"""Multi-run studies: linewidth versus field bandwidth for the PDM and for noise."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .atomsolver import AtomParams, detuning_scan
from .decorr import pdm_scan
from .lineshape import LineshapeScan, voigt_width
from .noisegen import PowerSpectralDensity, PsdFamily
from .pulse import GaussianEnvelope, fourier_limited_bandwidth

__all__ = [
    "FwhmPoint",
    "LinearFit",
    "width_grid",
    "pdm_fwhm_curve",
    "noise_fwhm_curve",
    "linear_fit",
]


@dataclass
class FwhmPoint:
    tau: float
    gamma: float
    delta_omega_s: float
    fwhm: float
    voigt_width: float
    scan: LineshapeScan = field(repr=False, default=None)


@dataclass
class LinearFit:
    slope: float
    intercept: float
    max_rel_residual: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def width_grid(expected_fwhm: float, n: int = 41) -> np.ndarray:
    """Half-scan detunings ``[0, expected_fwhm]``, so the half maximum falls mid-range."""
    return np.linspace(0.0, expected_fwhm, n)


def pdm_fwhm_curve(tau: float, params: AtomParams, gammas, *, n_points: int = 41,
                   backend: str | None = None) -> list[FwhmPoint]:
    """FWHM of the deterministic PDM lineshape for each field bandwidth."""
    env = GaussianEnvelope.centered(tau)
    dmin = fourier_limited_bandwidth(tau)
    out = []
    for g in gammas:
        guess = voigt_width(params.gamma21 + g, dmin)
        scan = pdm_scan(env, params, g, width_grid(guess, n_points), backend=backend)
        out.append(FwhmPoint(tau, float(g), math.hypot(dmin, g), scan.fwhm, guess, scan))
    return out


def noise_fwhm_curve(tau: float, params: AtomParams, delta_omegas, n_traj: int, master_seed: int,
                     *, family: PsdFamily = PsdFamily.GAUSSIAN, n_points: int = 41,
                     backend: str | None = None) -> list[FwhmPoint]:
    """FWHM of the stochastic lineshape at each combined bandwidth ``Delta omega_s``.

    The PSD bandwidth is ``sqrt(dw^2 - dw_min^2)``; values below the Fourier
    limit of ``tau`` are skipped.
    """
    env = GaussianEnvelope.centered(tau)
    dmin = fourier_limited_bandwidth(tau)
    out = []
    for dw in delta_omegas:
        if dw < dmin * (1 - 1e-12):
            continue
        g = math.sqrt(max(dw * dw - dmin * dmin, 0.0))
        psd = PowerSpectralDensity.from_bandwidth(family, g) if g > 0 else None
        expect = voigt_width(params.gamma21, dw)
        det = width_grid(1.25 * expect, n_points)
        scan = detuning_scan(env, psd, params, det, n_traj, master_seed, backend=backend)
        out.append(FwhmPoint(tau, g, float(dw), scan.fwhm, expect, scan))
    return out


def linear_fit(x, y) -> LinearFit:
    """Least-squares line and its largest residual relative to the data."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = np.abs(y - (slope * x + intercept)) / np.abs(y)
    return LinearFit(float(slope), float(intercept), float(resid.max()))
