"""Stationary complex Gaussian colored noise from a power spectral density.

The noise is built on a symmetric frequency grid ``omega_k = k * domega``,
``k = -N/2 .. N/2 - 1``. Each grid point receives an independent circular
complex Gaussian amplitude with ``<|xi_k|^2> = domega * P(omega_k)`` and the
time series is ``zeta(t_j) = sum_k xi_k exp(i omega_k t_j)``, evaluated with
one inverse FFT. The time grid is ``t_j = j * dt`` with ``dt = 2 pi / (N domega)``.
The same sum evaluated at the half steps ``t_j + dt/2`` (phases
``exp(i omega_k dt/2)``) gives the exact midpoint values the integrator needs.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "PsdFamily",
    "PowerSpectralDensity",
    "FrequencyGrid",
    "NoiseTrajectory",
    "GridError",
    "psd_eval",
    "theoretical_g1",
    "psd_bandwidth",
    "coherence_time",
    "size_grid",
    "trajectory_seed",
    "sample_spectral_amplitudes",
    "synthesize_noise",
    "generate_noise",
    "noise_batch",
]

SQRT_2PI = math.sqrt(2.0 * math.pi)
FWHM_GAUSS = 2.0 * math.sqrt(2.0 * math.log(2.0))


class GridError(ValueError):
    """Raised for frequency grids that violate their sizing invariants."""


class PsdFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LORENTZIAN = "lorentzian"


@dataclass(frozen=True)
class PowerSpectralDensity:
    """Unit-area noise spectrum of the Gaussian or Lorentzian family.

    The Lorentzian family yields exponentially correlated noise.
    """

    family: PsdFamily
    sigma_omega: float

    def __post_init__(self):
        object.__setattr__(self, "family", PsdFamily(self.family))
        if not (self.sigma_omega > 0 and math.isfinite(self.sigma_omega)):
            raise ValueError(f"sigma_omega must be positive, got {self.sigma_omega}")

    @classmethod
    def from_bandwidth(cls, family: PsdFamily | str, gamma: float) -> "PowerSpectralDensity":
        """Build the PSD whose FWHM equals ``gamma``."""
        family = PsdFamily(family)
        if family is PsdFamily.GAUSSIAN:
            return cls(family, gamma / FWHM_GAUSS)
        return cls(family, gamma / 2.0)

    def __call__(self, omega):
        return psd_eval(self, omega)

    @property
    def bandwidth(self) -> float:
        return psd_bandwidth(self)

    @property
    def coherence_time(self) -> float:
        return coherence_time(self)

    def g1(self, dt):
        return theoretical_g1(self, dt)


def psd_eval(psd: PowerSpectralDensity, omega):
    w = np.asarray(omega, dtype=float) / psd.sigma_omega
    if psd.family is PsdFamily.GAUSSIAN:
        out = np.exp(-0.5 * w * w) / (psd.sigma_omega * SQRT_2PI)
    else:
        out = 1.0 / (psd.sigma_omega * math.pi * (w * w + 1.0))
    return out if out.ndim else float(out)


def theoretical_g1(psd: PowerSpectralDensity, dt):
    """Normalized field correlation, the Fourier transform of the PSD."""
    dt = np.asarray(dt, dtype=float)
    if psd.family is PsdFamily.GAUSSIAN:
        out = np.exp(-0.5 * (psd.sigma_omega * dt) ** 2)
    else:
        # gamma = 2 sigma, so exp(-gamma |dt| / 2) = exp(-sigma |dt|)
        out = np.exp(-psd.sigma_omega * np.abs(dt))
    return out if out.ndim else float(out)


def psd_bandwidth(psd: PowerSpectralDensity) -> float:
    if psd.family is PsdFamily.GAUSSIAN:
        return FWHM_GAUSS * psd.sigma_omega
    return 2.0 * psd.sigma_omega


def coherence_time(psd: PowerSpectralDensity) -> float:
    if psd.family is PsdFamily.GAUSSIAN:
        return math.sqrt(math.pi) / psd.sigma_omega
    return 1.0 / psd.sigma_omega


@dataclass(frozen=True)
class FrequencyGrid:
    n_points: int
    delta_omega: float

    def __post_init__(self):
        if not self.delta_omega > 0:
            raise GridError(f"delta_omega must be positive, got {self.delta_omega}")
        if self.n_points < 256 or self.n_points % 2:
            raise GridError(f"n_points must be even and >= 256, got {self.n_points}")

    @property
    def dt(self) -> float:
        return 2.0 * math.pi / (self.n_points * self.delta_omega)

    @property
    def window(self) -> float:
        return 2.0 * math.pi / self.delta_omega

    @property
    def span(self) -> float:
        return self.n_points * self.delta_omega

    @property
    def omegas(self) -> np.ndarray:
        k = np.arange(-self.n_points // 2, self.n_points // 2)
        return k * self.delta_omega

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_points) * self.dt

    def check_psd(self, psd: PowerSpectralDensity) -> None:
        if self.span < 8.0 * psd.bandwidth:
            raise GridError(
                f"grid span {self.span:.4g} is below 8x the PSD FWHM ({psd.bandwidth:.4g})"
            )

    def captured_mass(self, psd: PowerSpectralDensity) -> float:
        """Discrete spectral mass ``sum_k domega P(omega_k)``, i.e. ``<|zeta|^2>``."""
        return float(np.sum(psd_eval(psd, self.omegas)) * self.delta_omega)


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(math.ceil(math.log2(max(n, 1)))))


def size_grid(
    tau: float,
    psd: PowerSpectralDensity | None = None,
    gamma2: float | None = None,
    center_factor: float = 5.0,
    min_window: float = 0.0,
) -> FrequencyGrid:
    """Pick a grid for a pulse of duration ``tau`` centred at ``center_factor * tau``.

    Window ``T >= max(10 tau, 10/gamma2, 20 T_c)`` and step
    ``dt <= min(T_c, 1/gamma2, tau) / 20``. The step is shrunk so that the
    pulse centre falls exactly on a grid node and ``N`` is a power of two.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    scales = [tau]
    window = max(10.0 * tau, min_window)
    if gamma2 is not None:
        scales.append(1.0 / gamma2)
        window = max(window, 10.0 / gamma2)
    if psd is not None:
        tc = coherence_time(psd)
        scales.append(tc)
        window = max(window, 20.0 * tc)
    dt_max = min(scales) / 20.0
    center = center_factor * tau
    m = int(math.ceil(center / dt_max))
    dt = center / m
    # +1 keeps the last node at or beyond the window end
    n = max(256, _next_pow2(int(math.ceil(window / dt)) + 1))
    grid = FrequencyGrid(n, 2.0 * math.pi / (n * dt))
    if psd is not None:
        grid.check_psd(psd)
    return grid


def trajectory_seed(master_seed: int, index: int) -> int:
    """64-bit seed for trajectory ``index``; independent of generation order."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _standard_draws(seed: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((2, n))


def sample_spectral_amplitudes(
    psd: PowerSpectralDensity, grid: FrequencyGrid, rng_seed: int
) -> np.ndarray:
    """Independent circular complex Gaussian amplitudes ``xi_k`` in ascending-omega order."""
    if not isinstance(grid, FrequencyGrid) or not grid.delta_omega > 0:
        raise GridError("invalid frequency grid")
    scale = np.sqrt(grid.delta_omega * psd_eval(psd, grid.omegas) / 2.0)
    ab = _standard_draws(rng_seed, grid.n_points)
    return scale * (ab[0] + 1j * ab[1])


def _synthesize(amplitudes: np.ndarray) -> np.ndarray:
    # zeta_j = sum_k xi_k e^{2 pi i k j / N} = N * ifft(ifftshift(xi))
    n = amplitudes.shape[-1]
    return n * np.fft.ifft(np.fft.ifftshift(amplitudes, axes=-1), axis=-1)


def _synthesize_midpoints(amplitudes: np.ndarray, grid: FrequencyGrid) -> np.ndarray:
    """``zeta(t_j + dt/2)`` from the same amplitudes."""
    return _synthesize(amplitudes * np.exp(0.5j * grid.dt * grid.omegas))


@dataclass
class NoiseTrajectory:
    times: np.ndarray
    values: np.ndarray
    seed: int | None = None
    psd: PowerSpectralDensity | None = None
    metadata: dict = field(default_factory=dict)
    midpoints: np.ndarray | None = None

    def __post_init__(self):
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have the same length")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def synthesize_noise(
    amplitudes, grid: FrequencyGrid, *, seed: int | None = None,
    psd: PowerSpectralDensity | None = None,
) -> NoiseTrajectory:
    amplitudes = np.asarray(amplitudes, dtype=complex)
    if amplitudes.shape != (grid.n_points,):
        raise ValueError(
            f"expected {grid.n_points} amplitudes, got shape {amplitudes.shape}"
        )
    meta = {}
    if psd is not None:
        meta["captured_mass"] = grid.captured_mass(psd)
    return NoiseTrajectory(
        grid.times, _synthesize(amplitudes), seed, psd, meta,
        _synthesize_midpoints(amplitudes, grid),
    )


def generate_noise(
    psd: PowerSpectralDensity, grid: FrequencyGrid, master_seed: int, index: int = 0
) -> NoiseTrajectory:
    seed = trajectory_seed(master_seed, index)
    xi = sample_spectral_amplitudes(psd, grid, seed)
    return synthesize_noise(xi, grid, seed=seed, psd=psd)


def noise_batch(
    psd: PowerSpectralDensity, grid: FrequencyGrid, seeds: Sequence[int],
    midpoints: bool = False,
):
    """Noise series for many seeds at once, shape ``(len(seeds), N)``.

    Row ``i`` is bit-identical to ``synthesize_noise`` for ``seeds[i]`` alone.
    With ``midpoints`` the half-step series is returned as a second array.
    """
    scale = np.sqrt(grid.delta_omega * psd_eval(psd, grid.omegas) / 2.0)
    xi = np.empty((len(seeds), grid.n_points), dtype=complex)
    for i, s in enumerate(seeds):
        ab = _standard_draws(s, grid.n_points)
        xi[i] = scale * (ab[0] + 1j * ab[1])
    if midpoints:
        return _synthesize(xi), _synthesize_midpoints(xi, grid)
    return _synthesize(xi)
