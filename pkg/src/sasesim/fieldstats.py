"""Ensemble statistics of stochastic pulses.

An :class:`EnsembleAccumulator` is filled in one pass over a set of pulses
and can be merged with others. Estimators then turn its sums into mean
intensity, first-order coherence, intensity/energy distributions and the
energy spectral density.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .lineshape import fwhm as _fwhm
from .noisegen import FrequencyGrid, PowerSpectralDensity, noise_batch, trajectory_seed
from .pulse import Envelope, PulseRealization, grid_for

__all__ = [
    "EnsembleAccumulator",
    "DistributionFit",
    "Spectrum",
    "InsufficientSamplesError",
    "accumulate",
    "accumulate_ensemble",
    "merge_tree",
    "degree_of_coherence",
    "coherence_vs_lag",
    "fit_intensity_distribution",
    "fit_energy_distribution",
    "energy_spectral_density",
    "mode_number",
    "histogram_bins",
]

UNDEFINED_FLOOR = 1e-12
MAX_ANCHORS = 128
MIN_FIT_SAMPLES = 500
MIN_SPECTRUM_TRAJ = 100
ENSEMBLE_CHUNK = 64


class InsufficientSamplesError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


def _anchor_indices(times: np.ndarray, env: Envelope | None, max_anchors: int) -> np.ndarray:
    if env is None:
        idx = np.arange(times.size)
    else:
        idx = np.nonzero(env(times) >= 1e-4)[0]
        if idx.size == 0:
            idx = np.arange(times.size)
    if idx.size > max_anchors:
        pick = np.round(np.linspace(0, idx.size - 1, max_anchors)).astype(int)
        idx = idx[pick]
    return idx


@dataclass
class EnsembleAccumulator:
    """Streaming sums over pulses sharing one time grid.

    Parameters
    ----------
    times : ndarray
        Uniform time grid of every pulse.
    reference_index : int
        Grid index of the fixed time for the full-resolution correlator row.
    anchors : ndarray of int
        Decimated grid indices for the two-time correlator (at most 128).
    probe_indices : sequence of int
        Grid indices at which raw intensity samples are kept.
    oversample : int
        Zero-padding factor for the spectrum accumulator.
    """

    times: np.ndarray
    reference_index: int
    anchors: np.ndarray
    probe_indices: tuple = ()
    oversample: int = 8
    n_traj: int = 0
    mean_intensity: np.ndarray = None
    m2_intensity: np.ndarray = None
    row_sum: np.ndarray = None
    row_sq_sum: np.ndarray = None
    anchor_sum: np.ndarray = None
    lag_sum: np.ndarray = None
    lag_sq_sum: np.ndarray = None
    spectrum_sum: np.ndarray = None
    probe_samples: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.times.size
        a = len(self.anchors)
        if a > MAX_ANCHORS:
            raise ValueError(f"at most {MAX_ANCHORS} anchors")
        self.anchors = np.asarray(self.anchors, dtype=int)
        self.probe_indices = tuple(int(i) for i in self.probe_indices)
        if self.mean_intensity is None:
            self.mean_intensity = np.zeros(n)
            self.m2_intensity = np.zeros(n)
            self.row_sum = np.zeros(n, dtype=complex)
            self.row_sq_sum = np.zeros(n)
            self.anchor_sum = np.zeros((a, a), dtype=complex)
            self.lag_sum = np.zeros(n, dtype=complex)
            self.lag_sq_sum = np.zeros(n)
            self.spectrum_sum = np.zeros(self.oversample * n)
            self.probe_samples = [[] for _ in self.probe_indices]

    @classmethod
    def for_grid(
        cls,
        times: np.ndarray,
        env: Envelope | None = None,
        *,
        reference_time: float | None = None,
        probe_times: Sequence[float] = (),
        max_anchors: int = MAX_ANCHORS,
        oversample: int = 8,
    ) -> "EnsembleAccumulator":
        times = np.asarray(times, dtype=float)
        dt = times[1] - times[0]
        if reference_time is None:
            reference_time = env.t0 if env is not None else times[times.size // 2]
        ref = int(round((reference_time - times[0]) / dt))
        probes = tuple(int(round((t - times[0]) / dt)) for t in probe_times)
        for i in (ref, *probes):
            if not 0 <= i < times.size:
                raise ValueError("reference or probe time outside the grid")
        return cls(times, ref, _anchor_indices(times, env, max_anchors), probes, oversample)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def intensity_variance(self) -> np.ndarray:
        if self.n_traj < 2:
            return np.zeros_like(self.mean_intensity)
        return self.m2_intensity / (self.n_traj - 1)

    @property
    def intensity_stderr(self) -> np.ndarray:
        if self.n_traj < 2:
            return np.zeros_like(self.mean_intensity)
        return np.sqrt(self.intensity_variance / self.n_traj)

    @property
    def probe_times(self) -> np.ndarray:
        return self.times[list(self.probe_indices)]

    def _empty_like(self) -> "EnsembleAccumulator":
        return EnsembleAccumulator(
            self.times, self.reference_index, self.anchors, self.probe_indices, self.oversample
        )

    def add_fields(self, fields: np.ndarray) -> "EnsembleAccumulator":
        """Add a batch of complex fields, shape ``(n, len(times))``."""
        fields = np.atleast_2d(np.asarray(fields, dtype=complex))
        if fields.shape[1] != self.times.size:
            raise GridMismatchError(
                f"pulse has {fields.shape[1]} samples, accumulator grid has {self.times.size}"
            )
        b = fields.shape[0]
        if b == 0:
            return self
        inten = fields.real ** 2 + fields.imag ** 2
        bmean = inten.mean(axis=0)
        bm2 = ((inten - bmean) ** 2).sum(axis=0)
        self._combine_moments(b, bmean, bm2)

        ref = fields[:, self.reference_index]
        prod = fields * np.conj(ref)[:, None]
        self.row_sum += prod.sum(axis=0)
        self.row_sq_sum += (inten * inten[:, self.reference_index][:, None]).sum(axis=0)
        fa = fields[:, self.anchors]
        self.anchor_sum += fa.T @ np.conj(fa)

        n = self.times.size
        spec = np.fft.fft(fields, n=2 * n, axis=1)
        # sum_t E(t + lag) E*(t) for lag = 0 .. n-1
        lag = np.fft.ifft(spec.real ** 2 + spec.imag ** 2, axis=1)[:, :n]
        self.lag_sum += lag.sum(axis=0)
        self.lag_sq_sum += (lag.real ** 2 + lag.imag ** 2).sum(axis=0)

        big = np.fft.fft(fields, n=self.oversample * n, axis=1)
        self.spectrum_sum += (big.real ** 2 + big.imag ** 2).sum(axis=0) * self.dt ** 2

        for k, i in enumerate(self.probe_indices):
            self.probe_samples[k].extend(inten[:, i].tolist())
        self.energies.extend(np.trapezoid(inten, self.times, axis=1).tolist())
        return self

    def _combine_moments(self, nb, mean_b, m2_b):
        na = self.n_traj
        n = na + nb
        delta = mean_b - self.mean_intensity
        self.mean_intensity = self.mean_intensity + delta * (nb / n)
        self.m2_intensity = self.m2_intensity + m2_b + delta * delta * (na * nb / n)
        self.n_traj = n

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        """New accumulator holding both sample sets (``self`` first)."""
        if (other.times.shape != self.times.shape or other.reference_index != self.reference_index
                or not np.array_equal(other.anchors, self.anchors)
                or other.probe_indices != self.probe_indices
                or other.oversample != self.oversample
                or not np.array_equal(other.times, self.times)):
            raise GridMismatchError("accumulators are on different grids")
        out = self._empty_like()
        out.n_traj = self.n_traj
        out.mean_intensity = self.mean_intensity.copy()
        out.m2_intensity = self.m2_intensity.copy()
        if other.n_traj:
            out._combine_moments(other.n_traj, other.mean_intensity, other.m2_intensity)
        for name in ("row_sum", "row_sq_sum", "anchor_sum", "lag_sum", "lag_sq_sum",
                     "spectrum_sum"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        out.probe_samples = [a + b for a, b in zip(self.probe_samples, other.probe_samples)]
        out.energies = self.energies + other.energies
        out.metadata = {**self.metadata, **other.metadata}
        return out


def accumulate(acc: EnsembleAccumulator, p: PulseRealization, tls=None) -> EnsembleAccumulator:
    """Add one pulse (``tls`` is accepted for call-site symmetry and unused)."""
    if p.times.shape != acc.times.shape or abs(p.dt - acc.dt) > 1e-12 * acc.dt:
        raise GridMismatchError("pulse is not on the accumulator grid")
    return acc.add_fields(p.field[None, :])


def merge_tree(parts: Sequence[EnsembleAccumulator]) -> EnsembleAccumulator:
    """Pairwise reduction with a shape fixed by ``len(parts)`` alone."""
    if not parts:
        raise ValueError("nothing to merge")
    level = list(parts)
    while len(level) > 1:
        nxt = [level[i].merge(level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def accumulate_ensemble(
    env: Envelope,
    psd: PowerSpectralDensity | None,
    n_traj: int,
    master_seed: int,
    *,
    grid: FrequencyGrid | None = None,
    gamma2: float | None = None,
    probe_times: Sequence[float] = (),
    reference_time: float | None = None,
    workers: int = 1,
    chunk: int = ENSEMBLE_CHUNK,
    oversample: int = 8,
) -> EnsembleAccumulator:
    """Generate ``n_traj`` pulses and accumulate their statistics.

    Chunks of ``chunk`` trajectories are processed independently (possibly on
    ``workers`` threads) and reduced by :func:`merge_tree`, so the result does
    not depend on ``workers``. ``psd=None`` gives Fourier-limited pulses.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be positive")
    grid = grid if grid is not None else grid_for(env, psd, gamma2)
    times = grid.times
    amp = np.sqrt(env.peak_intensity * env(times))
    proto = EnsembleAccumulator.for_grid(
        times, env, reference_time=reference_time, probe_times=probe_times,
        oversample=oversample,
    )
    starts = list(range(0, n_traj, chunk))

    def run(s):
        acc = proto._empty_like()
        idx = range(s, min(s + chunk, n_traj))
        if psd is None:
            zeta = np.ones((len(idx), times.size), dtype=complex)
        else:
            zeta = noise_batch(psd, grid, [trajectory_seed(master_seed, i) for i in idx])
        return acc.add_fields(zeta * amp)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    acc = merge_tree(parts)
    acc.metadata = {
        "n_points": grid.n_points,
        "dt": grid.dt,
        "n_traj": n_traj,
        "master_seed": master_seed,
    }
    if psd is not None:
        acc.metadata.update(
            psd_family=psd.family.value, sigma_omega=psd.sigma_omega,
            captured_mass=grid.captured_mass(psd),
        )
    return acc


def _peak_floor(acc: EnsembleAccumulator) -> float:
    return UNDEFINED_FLOOR * float(acc.mean_intensity.max())


def degree_of_coherence(acc: EnsembleAccumulator) -> tuple[np.ndarray, np.ndarray]:
    """``|g1(t_a, t_b)|`` on the anchor grid; NaN where ``<I>`` is below the floor.

    Returns
    -------
    times : ndarray
        Anchor times.
    g1 : ndarray
        Matrix ``|g1|[a, b]``.
    """
    if acc.n_traj < 2:
        raise InsufficientSamplesError("need at least two trajectories")
    mi = acc.mean_intensity[acc.anchors]
    ok = mi > _peak_floor(acc)
    g = np.abs(acc.anchor_sum) / acc.n_traj
    with np.errstate(invalid="ignore", divide="ignore"):
        g = g / np.sqrt(np.outer(mi, mi))
    g[~ok, :] = np.nan
    g[:, ~ok] = np.nan
    return acc.times[acc.anchors], g


@dataclass
class CoherenceCurve:
    lags: np.ndarray
    g1: np.ndarray
    stderr: np.ndarray
    method: str


def coherence_vs_lag(acc: EnsembleAccumulator, max_lag: float | None = None, *,
                     method: str = "lag") -> CoherenceCurve:
    """``|g1|`` as a function of the delay ``t - t'``.

    ``method="lag"`` sums the two-time correlator along each diagonal over the
    whole grid and normalizes by the matching sum of ``sqrt(<I(t)><I(t')>)``;
    ``method="row"`` uses the single row through the reference time.
    """
    if acc.n_traj < 2:
        raise InsufficientSamplesError("need at least two trajectories")
    n = acc.n_traj
    mi = np.clip(acc.mean_intensity, 0.0, None)
    nmax = acc.times.size if max_lag is None else min(acc.times.size,
                                                      int(math.floor(max_lag / acc.dt + 1e-9)) + 1)
    if method == "lag":
        root = np.sqrt(mi).astype(complex)
        spec = np.fft.fft(root, n=2 * root.size)
        norm = np.fft.ifft(np.abs(spec) ** 2)[:nmax].real
        num = acc.lag_sum[:nmax] / n
        var = np.maximum(acc.lag_sq_sum[:nmax] / n - np.abs(num) ** 2, 0.0) * n / max(n - 1, 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.abs(num) / norm
            err = np.sqrt(var / n) / norm
        bad = norm <= UNDEFINED_FLOOR * norm[0]
        g[bad] = np.nan
        err[bad] = np.nan
    elif method == "row":
        r = acc.reference_index
        cols = r + np.arange(nmax)
        cols = cols[cols < acc.times.size]
        num = acc.row_sum[cols] / n
        var = np.maximum(acc.row_sq_sum[cols] / n - np.abs(num) ** 2, 0.0) * n / max(n - 1, 1)
        norm = np.sqrt(mi[cols] * mi[r])
        ok = mi[cols] > _peak_floor(acc)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(ok, np.abs(num) / norm, np.nan)
            err = np.where(ok, np.sqrt(var / n) / norm, np.nan)
        nmax = cols.size
    else:
        raise ValueError("method must be 'lag' or 'row'")
    return CoherenceCurve(np.arange(nmax) * acc.dt, g, err, method)


def histogram_bins(x: np.ndarray, min_bins: int = 20) -> np.ndarray:
    """Freedman-Diaconis bin edges over the sample range, at least ``min_bins`` bins.

    Returns an empty array for a sample with no spread.
    """
    x = np.asarray(x, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    q75, q25 = np.percentile(x, [75, 25])
    if not (hi > lo and q75 > q25):
        return np.array([])
    edges = np.histogram_bin_edges(x, bins="fd")
    if edges.size - 1 < min_bins:
        edges = np.linspace(lo, hi, min_bins + 1)
    return edges


@dataclass
class DistributionFit:
    """Histogram of normalized samples against a one-parameter family.

    ``model`` is ``"exponential"`` or ``"gamma"``; ``shape`` is the Gamma
    shape ``M`` (1 for the exponential). ``chi2_dof`` is NaN and ``ok`` False
    when the histogram is degenerate.
    """

    model: str
    shape: float
    edges: np.ndarray
    counts: np.ndarray
    expected: np.ndarray
    chi2: float
    dof: int
    n_samples: int
    sample_mean: float
    ok: bool = True
    message: str = ""

    @property
    def chi2_dof(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def density(self) -> np.ndarray:
        w = np.diff(self.edges)
        return self.counts / (self.n_samples * w)

    def model_density(self, x) -> np.ndarray:
        if self.model == "exponential":
            return stats.expon.pdf(x)
        return stats.gamma.pdf(x, self.shape, scale=1.0 / self.shape)

    def to_columns(self) -> dict:
        c = self.centers
        return {"x": c, "density": self.density(), "model": self.model_density(c),
                "count": self.counts, "expected": self.expected}


def _pearson(normalized: np.ndarray, cdf, n_params: int, model: str, shape: float,
             mean: float) -> DistributionFit:
    n = normalized.size
    edges = histogram_bins(normalized)
    if edges.size == 0:
        return DistributionFit(model, shape, np.array([0.0, 1.0]), np.array([n]),
                               np.array([float(n)]), float("nan"), 0, n, mean, False,
                               "degenerate sample: no spread")
    counts, _ = np.histogram(normalized, edges)
    # the outer bins absorb the model tails beyond the sample range
    c = cdf(edges)
    probs = np.diff(c)
    probs[0] += c[0]
    probs[-1] += 1.0 - c[-1]
    expected = n * probs
    use = expected >= 5.0
    k = int(use.sum())
    dof = k - 1 - n_params
    if dof <= 0:
        return DistributionFit(model, shape, edges, counts, expected, float("nan"), dof, n,
                               mean, False, "too few usable bins")
    chi2 = float(np.sum((counts[use] - expected[use]) ** 2 / expected[use]))
    return DistributionFit(model, shape, edges, counts, expected, chi2, dof, n, mean)


def _samples_at(acc: EnsembleAccumulator, probe_time: float | None) -> np.ndarray:
    if not acc.probe_indices:
        raise ValueError("accumulator has no probe times")
    if probe_time is None:
        k = 0
    else:
        k = int(np.argmin(np.abs(acc.probe_times - probe_time)))
        if abs(acc.probe_times[k] - probe_time) > 0.5 * acc.dt + 1e-12:
            raise ValueError(f"no probe at t={probe_time}")
    return np.asarray(acc.probe_samples[k], dtype=float)


def fit_intensity_distribution(acc: EnsembleAccumulator,
                               probe_time: float | None = None) -> DistributionFit:
    """Histogram of ``I/<I>`` at a probe time against the unit-mean exponential."""
    x = _samples_at(acc, probe_time)
    if x.size < MIN_FIT_SAMPLES:
        raise InsufficientSamplesError(f"need {MIN_FIT_SAMPLES} samples, have {x.size}")
    mean = float(x.mean())
    if mean <= 0:
        raise InsufficientSamplesError("zero mean intensity at the probe time")
    return _pearson(x / mean, stats.expon.cdf, 1, "exponential", 1.0, mean)


def fit_energy_distribution(acc: EnsembleAccumulator) -> DistributionFit:
    """Histogram of ``W/<W>`` against a Gamma PDF with ``M`` from the moments."""
    w = np.asarray(acc.energies, dtype=float)
    if w.size < MIN_FIT_SAMPLES:
        raise InsufficientSamplesError(f"need {MIN_FIT_SAMPLES} energies, have {w.size}")
    mean = float(w.mean())
    var = float(w.var(ddof=1))
    # identical pulses leave only rounding noise in the variance
    if not var > (1e-12 * mean) ** 2:
        raise InsufficientSamplesError("pulse energies have zero variance")
    m = mean * mean / var
    cdf = stats.gamma(m, scale=1.0 / m).cdf
    return _pearson(w / mean, cdf, 2, "gamma", m, mean)


def mode_number(env: Envelope, psd: PowerSpectralDensity | None, *, n: int = 1201,
                width: float = 6.0) -> float:
    """``M`` from ``1/M = int int fbar(t) fbar(t') |g1(t - t')|^2 dt dt'``.

    ``fbar`` is the envelope normalized to unit area; 2-D trapezoid on an
    ``n x n`` grid covering ``t0 +- width * duration``.
    """
    if psd is None:
        return 1.0
    half = width * env.duration
    t = np.linspace(env.t0 - half, env.t0 + half, n)
    h = t[1] - t[0]
    f = env(t)
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    fw = f * w
    fw = fw / fw.sum()
    g2 = np.abs(psd.g1(t[:, None] - t[None, :])) ** 2
    return float(1.0 / (fw @ g2 @ fw))


@dataclass
class Spectrum:
    omega: np.ndarray
    density: np.ndarray
    n_traj: int

    @property
    def fwhm(self) -> float:
        return _fwhm(self.omega, self.density)

    def area(self) -> float:
        return float(np.trapezoid(self.density, self.omega))


def energy_spectral_density(acc: EnsembleAccumulator, *,
                            min_traj: int = MIN_SPECTRUM_TRAJ) -> Spectrum:
    """Mean periodogram, normalized to unit area over angular frequency."""
    if acc.n_traj < min_traj:
        raise InsufficientSamplesError(f"need {min_traj} trajectories, have {acc.n_traj}")
    m = acc.spectrum_sum.size
    omega = np.fft.fftshift(np.fft.fftfreq(m, acc.dt)) * 2.0 * math.pi
    dens = np.fft.fftshift(acc.spectrum_sum) / acc.n_traj
    dens = dens / np.trapezoid(dens, omega)
    return Spectrum(omega, dens, acc.n_traj)
