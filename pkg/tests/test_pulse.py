from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasesim.config import GAMMA2_KR
from sasesim.io import read_csv
from sasesim.noisegen import (
    NoiseTrajectory,
    PowerSpectralDensity,
    PsdFamily,
    generate_noise,
    noise_batch,
    trajectory_seed,
)
from sasesim.pulse import (
    CoverageError,
    FlatTopEnvelope,
    GaussianEnvelope,
    combined_bandwidth,
    envelope_eval,
    fourier_limited_bandwidth,
    fourier_limited_pulse,
    grid_for,
    make_pulse,
    pulse_energy,
    write_pulse_csv,
)

GAUSS = PsdFamily.GAUSSIAN


def test_gaussian_envelope_values():
    env = GaussianEnvelope(10.0, 50.0)
    assert envelope_eval(env, 50.0) == 1.0
    assert envelope_eval(env, 60.0) == pytest.approx(math.exp(-1.0))
    assert env.fwhm == pytest.approx(16.651092223153952)


@settings(max_examples=50, deadline=None)
@given(rise=st.floats(0.5, 10), flat=st.floats(0.5, 20), fall=st.floats(0.5, 10))
def test_flattop_envelope_bounds(rise, flat, fall):
    t0 = rise + flat / 2 + 1.0
    env = FlatTopEnvelope(rise, flat, fall, t0)
    t = np.linspace(0, t0 + flat + 2 * fall, 2001)
    f = env(t)
    assert f.min() >= 0.0 and f.max() <= 1.0
    assert envelope_eval(env, t0) == 1.0
    # continuous: no jump larger than the ramp slope allows
    assert np.abs(np.diff(f)).max() <= math.pi / 2 * (t[1] - t[0]) / min(rise, fall) + 1e-12


def test_envelope_rejects_bad_parameters():
    with pytest.raises(ValueError):
        GaussianEnvelope(0.0, 5.0)
    with pytest.raises(ValueError):
        FlatTopEnvelope(2.0, 1.0, 1.0, 1.0)


def test_fourier_limited_pulse_follows_envelope():
    env = GaussianEnvelope.centered(4.0, peak_intensity=2.5)
    grid = grid_for(env, None, 1.0)
    p = fourier_limited_pulse(grid.times, env)
    assert np.allclose(p.intensity, 2.5 * env(grid.times), rtol=1e-14)
    half = grid.times + 0.5 * grid.dt
    assert np.allclose(p.midpoint_field, np.sqrt(2.5 * env(half)), rtol=1e-14)


def test_make_pulse_with_unit_noise_is_fourier_limited():
    env = GaussianEnvelope.centered(3.0)
    grid = grid_for(env, None, 1.0)
    ones = NoiseTrajectory(grid.times, np.ones(grid.n_points, dtype=complex),
                           midpoints=np.ones(grid.n_points, dtype=complex))
    p = make_pulse(ones, env)
    ref = fourier_limited_pulse(grid.times, env)
    assert np.array_equal(p.field, ref.field)
    assert np.array_equal(p.midpoint_field, ref.midpoint_field)


def test_pulse_intensity_consistent_with_noise():
    env = GaussianEnvelope.centered(3.0, peak_intensity=4.0)
    psd = PowerSpectralDensity(GAUSS, 1.0)
    grid = grid_for(env, psd, 1.0)
    z = generate_noise(psd, grid, 3)
    p = make_pulse(z, env)
    assert np.allclose(p.intensity, 4.0 * env(grid.times) * np.abs(z.values) ** 2)
    far = np.abs(grid.times - env.t0) > 5.0 * env.tau
    assert np.abs(p.field[far]).max() < 1e-4 * np.abs(p.field).max()
    assert p.seed == z.seed and p.psd == psd


def test_make_pulse_requires_coverage():
    env = GaussianEnvelope(10.0, 50.0)
    t = np.linspace(0.0, 60.0, 256)
    with pytest.raises(CoverageError):
        make_pulse(NoiseTrajectory(t, np.ones(256, dtype=complex)), env)


def test_mean_intensity_recovers_envelope():
    env = GaussianEnvelope.centered(10.0)
    psd = PowerSpectralDensity(GAUSS, 0.14)
    grid = grid_for(env, psd, GAMMA2_KR)
    z = noise_batch(psd, grid, [trajectory_seed(4, i) for i in range(1000)])
    mean = np.mean(np.abs(z) ** 2, axis=0) * env(grid.times)
    assert np.abs(mean - env(grid.times)).max() < 0.1


def test_spike_count_tracks_coherence_time():
    env = GaussianEnvelope.centered(10.0)
    psd = PowerSpectralDensity(GAUSS, 0.25)
    grid = grid_for(env, psd, GAMMA2_KR)
    counts = []
    for i in range(300):
        p = make_pulse(generate_noise(psd, grid, 8, i), env)
        inten = p.intensity
        peak = (inten[1:-1] > inten[:-2]) & (inten[1:-1] > inten[2:])
        tp = p.times[1:-1][peak]
        counts.append(np.sum(np.abs(tp - env.t0) <= env.fwhm / 2))
    expected = env.fwhm / psd.coherence_time
    assert np.mean(counts) == pytest.approx(expected, rel=0.5)


def test_pulse_energy():
    env = GaussianEnvelope.centered(5.0, peak_intensity=3.0)
    grid = grid_for(env, None, 1.0)
    p = fourier_limited_pulse(grid.times, env)
    assert pulse_energy(p) == pytest.approx(3.0 * 5.0 * math.sqrt(math.pi), rel=1e-6)
    zero = fourier_limited_pulse(grid.times, GaussianEnvelope.centered(5.0, peak_intensity=0.0))
    assert pulse_energy(zero) == 0.0


def test_mean_pulse_energy():
    env = GaussianEnvelope.centered(5.0)
    psd = PowerSpectralDensity(GAUSS, 0.8)
    grid = grid_for(env, psd, 1.0)
    z = noise_batch(psd, grid, [trajectory_seed(2, i) for i in range(2000)])
    w = np.trapezoid(np.abs(z) ** 2 * env(grid.times), grid.times, axis=1)
    assert w.mean() == pytest.approx(5.0 * math.sqrt(math.pi), rel=0.05)


def test_bandwidth_relations():
    assert fourier_limited_bandwidth(10.0) == pytest.approx(0.16651092223153954)
    assert fourier_limited_bandwidth(1e12) < 1e-11
    dt_s = 2.0 * math.sqrt(math.log(2.0)) * 10.0
    assert fourier_limited_bandwidth(10.0) == pytest.approx(4.0 * math.log(2.0) / dt_s)
    assert combined_bandwidth(7.0, 0.0) == fourier_limited_bandwidth(7.0)
    assert combined_bandwidth(20.0, 500.0) == pytest.approx(500.0, rel=1e-6)
    assert combined_bandwidth(20.0, 0.72) == pytest.approx(0.7247975384930604, rel=1e-12)
    with pytest.raises(ValueError):
        fourier_limited_bandwidth(0.0)
    with pytest.raises(ValueError):
        combined_bandwidth(1.0, -1.0)


def test_pulse_csv_export(tmp_path):
    env = GaussianEnvelope.centered(3.0)
    psd = PowerSpectralDensity(GAUSS, 1.0)
    p = make_pulse(generate_noise(psd, grid_for(env, psd, 1.0), 1), env)
    path = write_pulse_csv(p, tmp_path / "pulse.csv", header=["note: test"])
    cols, header = read_csv(path)
    assert header == ["note: test"]
    assert np.allclose(cols["t"], p.times)
    assert np.allclose(cols["re_field"] + 1j * cols["im_field"], p.field)
    assert np.allclose(cols["intensity"], p.intensity)
