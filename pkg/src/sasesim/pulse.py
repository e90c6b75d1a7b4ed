"""Stochastic pulses: stationary noise on a deterministic Fourier-limited envelope."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .noisegen import FrequencyGrid, NoiseTrajectory, PowerSpectralDensity, size_grid

__all__ = [
    "GaussianEnvelope",
    "FlatTopEnvelope",
    "Envelope",
    "PulseRealization",
    "CoverageError",
    "envelope_eval",
    "make_pulse",
    "pulse_energy",
    "fourier_limited_bandwidth",
    "combined_bandwidth",
    "write_pulse_csv",
    "grid_for",
    "integration_steps",
]

LN2 = math.log(2.0)


class CoverageError(ValueError):
    """The time grid does not cover the envelope support."""


@dataclass(frozen=True)
class GaussianEnvelope:
    """``f(t) = exp(-(t - t0)^2 / tau^2)``."""

    tau: float
    t0: float
    peak_intensity: float = 1.0

    def __post_init__(self):
        if not (self.tau > 0 and self.t0 > 0):
            raise ValueError("tau and t0 must be positive")
        if self.peak_intensity < 0:
            raise ValueError("peak_intensity must be non-negative")

    @classmethod
    def centered(cls, tau: float, peak_intensity: float = 1.0, center_factor: float = 5.0):
        return cls(tau, center_factor * tau, peak_intensity)

    def __call__(self, t):
        x = (np.asarray(t, dtype=float) - self.t0) / self.tau
        return np.exp(-x * x)

    @property
    def duration(self) -> float:
        return self.tau

    @property
    def fwhm(self) -> float:
        return 2.0 * math.sqrt(LN2) * self.tau

    def support(self, width: float = 5.0) -> tuple[float, float]:
        return self.t0 - width * self.tau, self.t0 + width * self.tau

    @property
    def end_time(self) -> float:
        return self.t0 + 5.0 * self.tau


@dataclass(frozen=True)
class FlatTopEnvelope:
    """Flat region of length ``flat`` centred on ``t0`` with half-cosine ramps."""

    rise: float
    flat: float
    fall: float
    t0: float
    peak_intensity: float = 1.0

    def __post_init__(self):
        if min(self.rise, self.flat, self.fall, self.t0) <= 0:
            raise ValueError("all FlatTop time parameters must be positive")
        if self.t0 - self.flat / 2 - self.rise < 0:
            raise ValueError("rising edge starts before t=0")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        a = self.t0 - self.flat / 2.0
        b = self.t0 + self.flat / 2.0
        out = np.zeros_like(t)
        up = (t > a - self.rise) & (t < a)
        out[up] = 0.5 * (1.0 - np.cos(math.pi * (t[up] - a + self.rise) / self.rise))
        out[(t >= a) & (t <= b)] = 1.0
        down = (t > b) & (t < b + self.fall)
        out[down] = 0.5 * (1.0 + np.cos(math.pi * (t[down] - b) / self.fall))
        return out

    @property
    def duration(self) -> float:
        return self.flat + 0.5 * (self.rise + self.fall)

    def support(self, width: float = 1.0) -> tuple[float, float]:
        return self.t0 - self.flat / 2 - self.rise, self.t0 + self.flat / 2 + self.fall

    @property
    def end_time(self) -> float:
        return self.support()[1] + max(self.rise, self.fall)


Envelope = Union[GaussianEnvelope, FlatTopEnvelope]


def grid_for(
    env: Envelope, psd: PowerSpectralDensity | None = None, gamma2: float | None = None
) -> FrequencyGrid:
    """Time/frequency grid covering ``env`` with its centre on a grid node."""
    if isinstance(env, GaussianEnvelope):
        return size_grid(env.tau, psd, gamma2, center_factor=env.t0 / env.tau)
    scale = min(env.rise, env.fall)
    return size_grid(
        scale, psd, gamma2, center_factor=env.t0 / scale, min_window=env.end_time
    )


def integration_steps(dt: float, env: Envelope) -> int:
    """Number of steps from ``t=0`` to the envelope's end time."""
    return int(math.ceil(env.end_time / dt - 1e-9))


def envelope_eval(env: Envelope, t):
    out = env(t)
    return out if np.ndim(out) else float(out)


@dataclass
class PulseRealization:
    times: np.ndarray
    field: np.ndarray
    envelope: Envelope
    psd: PowerSpectralDensity | None = None
    seed: int | None = None
    metadata: dict = field(default_factory=dict)
    midpoint_field: np.ndarray | None = None

    @property
    def intensity(self) -> np.ndarray:
        return self.field.real ** 2 + self.field.imag ** 2

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def _check_coverage(times: np.ndarray, env: Envelope) -> None:
    lo, hi = env.support()
    tol = 1e-9 * max(abs(hi), 1.0)
    if lo < times[0] - tol or hi > times[-1] + tol:
        raise CoverageError(
            f"grid [{times[0]:.4g}, {times[-1]:.4g}] does not cover envelope support "
            f"[{lo:.4g}, {hi:.4g}]"
        )


def _half_steps(times: np.ndarray) -> np.ndarray:
    return times + 0.5 * (times[1] - times[0])


def make_pulse(noise: NoiseTrajectory, env: Envelope) -> PulseRealization:
    _check_coverage(noise.times, env)
    amp = np.sqrt(env.peak_intensity * env(noise.times))
    mid = None
    if noise.midpoints is not None:
        mid = noise.midpoints * np.sqrt(env.peak_intensity * env(_half_steps(noise.times)))
    return PulseRealization(
        noise.times, noise.values * amp, env, noise.psd, noise.seed, dict(noise.metadata), mid
    )


def fourier_limited_pulse(times: np.ndarray, env: Envelope) -> PulseRealization:
    """Deterministic pulse, i.e. the ``zeta = 1`` limit."""
    _check_coverage(times, env)
    field_ = np.sqrt(env.peak_intensity * env(times)).astype(complex)
    mid = np.sqrt(env.peak_intensity * env(_half_steps(times))).astype(complex)
    return PulseRealization(times, field_, env, midpoint_field=mid)


def pulse_energy(p: PulseRealization) -> float:
    return float(np.trapezoid(p.intensity, p.times))


def fourier_limited_bandwidth(tau: float) -> float:
    if not tau > 0:
        raise ValueError("tau must be positive")
    return 2.0 * math.sqrt(LN2) / tau


def combined_bandwidth(tau: float, gamma: float) -> float:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return math.hypot(fourier_limited_bandwidth(tau), gamma)


def write_pulse_csv(p: PulseRealization, path, header=()):
    from .io import write_csv

    return write_csv(
        path,
        {"t": p.times, "re_field": p.field.real, "im_field": p.field.imag,
         "intensity": p.intensity},
        header,
    )
